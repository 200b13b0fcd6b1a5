#include "dbetel/io.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dbetel/errors.hpp"
#include "dbetel/math.hpp"

namespace dbetel::io {

int Csv::col(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return static_cast<int>(i);
  }
  return -1;
}

Eigen::VectorXd Csv::numeric(const std::string& name) const {
  const int c = col(name);
  if (c < 0) throw InvalidInput("csv: missing column '" + name + "'");
  Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out[static_cast<Eigen::Index>(r)] = parse_double(
        rows[r][static_cast<std::size_t>(c)],
        "line " + std::to_string(r + 2) + ", column " + std::to_string(c + 1));
  }
  return out;
}

Csv parse_csv(const std::string& text, const std::string& origin) {
  Csv out;
  std::vector<std::string> record;
  std::string field;
  bool in_quotes = false;
  bool any_field = false;
  int line = 1, col = 1;
  std::size_t expected_cols = 0;

  auto end_field = [&]() {
    record.push_back(field);
    field.clear();
    any_field = true;
  };
  auto end_record = [&](int at_line) {
    if (record.empty() && !any_field) return;
    end_field();
    if (out.header.empty()) {
      out.header = record;
      expected_cols = record.size();
    } else {
      if (record.size() != expected_cols) {
        throw InvalidInput(origin + ": line " + std::to_string(at_line) +
                           ": expected " + std::to_string(expected_cols) +
                           " fields, found " + std::to_string(record.size()));
      }
      out.rows.push_back(record);
    }
    record.clear();
    any_field = false;
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (in_quotes) {
      if (ch == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(ch);
        if (ch == '\n') ++line;
      }
    } else if (ch == '"') {
      if (!field.empty()) {
        throw InvalidInput(origin + ": line " + std::to_string(line) + ", column " +
                           std::to_string(col) + ": stray quote inside unquoted field");
      }
      in_quotes = true;
    } else if (ch == ',') {
      end_field();
    } else if (ch == '\n') {
      if (!field.empty() && field.back() == '\r') field.pop_back();
      end_record(line);
      ++line;
      col = 0;
    } else {
      field.push_back(ch);
    }
    ++col;
  }
  if (in_quotes) {
    throw InvalidInput(origin + ": line " + std::to_string(line) + ": unterminated quote");
  }
  if (any_field || !field.empty()) {
    if (!field.empty() && field.back() == '\r') field.pop_back();
    end_record(line);
  }
  if (out.header.empty()) throw InvalidInput(origin + ": missing header row");
  return out;
}

Csv read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str(), path);
}

namespace {

std::string escape_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += "\"\"";
    else out.push_back(ch);
  }
  out += '"';
  return out;
}

}  // namespace

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write '" + path + "'");
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (i) out << ',';
    out << escape_field(header[i]);
  }
  out << "\r\n";
  for (const auto& row : rows) {
    if (row.size() != header.size()) {
      throw InvalidInput("write_csv: row width does not match header");
    }
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out << ',';
      out << escape_field(row[i]);
    }
    out << "\r\n";
  }
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double(const std::string& cell, const std::string& where) {
  double value = 0.0;
  const char* begin = cell.data();
  const char* end = begin + cell.size();
  const auto res = std::from_chars(begin, end, value);
  if (res.ec != std::errc() || res.ptr != end) {
    throw InvalidInput("csv: malformed number '" + cell + "' at " + where);
  }
  return value;
}

void write_chain_csv(const std::string& path, const Chain& chain,
                     const std::vector<std::string>& names) {
  if (static_cast<Eigen::Index>(names.size()) != chain.draws.cols()) {
    throw InvalidInput("write_chain_csv: name/column mismatch");
  }
  std::vector<std::string> header = names;
  header.push_back("log_post");
  std::vector<std::vector<std::string>> rows;
  rows.reserve(static_cast<std::size_t>(chain.draws.rows()));
  for (Eigen::Index t = 0; t < chain.draws.rows(); ++t) {
    std::vector<std::string> row;
    row.reserve(header.size());
    for (Eigen::Index j = 0; j < chain.draws.cols(); ++j) {
      row.push_back(format_double(chain.draws(t, j)));
    }
    row.push_back(format_double(chain.log_post[t]));
    rows.push_back(std::move(row));
  }
  write_csv(path, header, rows);
}

void write_chain_sidecar(const std::string& path, const Chain& chain,
                         const std::string& config_hash) {
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot write '" + path + "'");
  out << "{\n"
      << "  \"seed\": " << chain.seed << ",\n"
      << "  \"acceptance_rate\": " << format_double(chain.acceptance_rate) << ",\n"
      << "  \"active_fraction\": " << format_double(chain.active_fraction) << ",\n"
      << "  \"draws\": " << chain.draws.rows() << ",\n"
      << "  \"config_hash\": \"" << config_hash << "\"\n"
      << "}\n";
}

std::string config_hash(const std::string& canonical_json) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(math::fnv1a64(canonical_json)));
  return buf;
}

}  // namespace dbetel::io
