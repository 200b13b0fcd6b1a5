#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "dbetel/inference.hpp"

// CSV input/output (RFC-4180: quoted fields, doubled quotes, CRLF) and
// chain serialization. Parse errors carry line/column diagnostics.

namespace dbetel::io {

struct Csv {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int col(const std::string& name) const;
  /// Numeric column by header name; throws InvalidInput with a cell
  /// diagnostic on malformed values.
  Eigen::VectorXd numeric(const std::string& name) const;
};

Csv read_csv(const std::string& path);
Csv parse_csv(const std::string& text, const std::string& origin = "<string>");

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

std::string format_double(double v);

double parse_double(const std::string& cell, const std::string& where);

/// One row per draw, header = parameter names.
void write_chain_csv(const std::string& path, const Chain& chain,
                     const std::vector<std::string>& names);

/// JSON sidecar: seed, acceptance rate, active fraction, config hash.
void write_chain_sidecar(const std::string& path, const Chain& chain,
                         const std::string& config_hash);

/// FNV-1a over a canonical JSON dump, rendered as 16 hex digits.
std::string config_hash(const std::string& canonical_json);

}  // namespace dbetel::io
