#pragma once

#include <stdexcept>
#include <string>

namespace dbetel {

struct NumericalUnderflow : std::runtime_error {
  explicit NumericalUnderflow(const std::string& what) : std::runtime_error(what) {}
};

struct QuantileBracketFailure : std::runtime_error {
  explicit QuantileBracketFailure(const std::string& what) : std::runtime_error(what) {}
};

struct UnattainableSkewness : std::runtime_error {
  explicit UnattainableSkewness(const std::string& what) : std::runtime_error(what) {}
};

struct IrlsDivergence : std::runtime_error {
  explicit IrlsDivergence(const std::string& what) : std::runtime_error(what) {}
};

struct SingularInformation : std::runtime_error {
  explicit SingularInformation(const std::string& what) : std::runtime_error(what) {}
};

struct DegenerateKde : std::runtime_error {
  explicit DegenerateKde(const std::string& what) : std::runtime_error(what) {}
};

struct AllRejected : std::runtime_error {
  explicit AllRejected(const std::string& what) : std::runtime_error(what) {}
};

struct NoActiveEpsilon : std::runtime_error {
  explicit NoActiveEpsilon(const std::string& what) : std::runtime_error(what) {}
};

struct RankDeficient : std::runtime_error {
  explicit RankDeficient(const std::string& what) : std::runtime_error(what) {}
};

struct SingularCovariance : std::runtime_error {
  explicit SingularCovariance(const std::string& what) : std::runtime_error(what) {}
};

struct InvalidInput : std::runtime_error {
  explicit InvalidInput(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace dbetel
