#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>

// Scalar special functions and seeding utilities shared across the library.

namespace dbetel::math {

inline constexpr double kPi = 3.141592653589793238462643383279502884;

double norm_pdf(double x);
double norm_cdf(double x);
/// Inverse standard normal CDF (Wichura's AS241, ~1e-15 relative accuracy).
double norm_quantile(double p);

double lbeta(double a, double b);
/// Regularized incomplete beta I_x(a, b) by continued fraction.
double inc_beta(double a, double b, double x);

double student_t_pdf(double x, double nu);
double student_t_cdf(double x, double nu);
double student_t_quantile(double p, double nu);

/// Owen's T function, evaluated from its single-integral representation
/// (Gauss-Legendre after the |a|>1 reduction identity). Accuracy ~1e-12.
double owens_t(double h, double a);

double skew_normal_pdf(double z, double loc, double scale, double slant);
double skew_normal_cdf(double z, double loc, double scale, double slant);
double skew_normal_quantile(double p, double loc, double scale, double slant);

/// log of the multivariate gamma function Gamma_d(a).
double lmvgamma(int d, double a);

/// Generic scalar root bracketing + bisection/Newton hybrid for monotone f.
/// Expands [lo, hi] geometrically until f changes sign; throws
/// QuantileBracketFailure after max_expand doublings.
double invert_monotone(const std::function<double(double)>& f, double target,
                       double lo, double hi, double tol = 1e-10,
                       int max_expand = 60);

uint64_t splitmix64(uint64_t x);

/// Deterministic seed derivation: replication r, fold i, grid point j (or any
/// subset) hashed against a root seed. Stable across platforms and versions.
uint64_t derive_seed(uint64_t root, uint64_t a = 0, uint64_t b = 0, uint64_t c = 0);

/// FNV-1a over a byte string; used for config hashes in output artifacts.
uint64_t fnv1a64(const std::string& bytes);

/// Sample variance (n-1 denominator) of a vector; 0 for n < 2.
double sample_variance(const Eigen::VectorXd& v);

double sample_skewness(const Eigen::VectorXd& v);

}  // namespace dbetel::math
