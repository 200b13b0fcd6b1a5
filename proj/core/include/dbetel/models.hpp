#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dbetel/transport.hpp"

// Problem-specific centering families, their priors, and synthetic data
// generators consumed by the inference engine.

namespace dbetel {

struct CenteringModel {
  std::function<EllipticalMixture(const Eigen::VectorXd&)> builder;
  int theta_dim = 0;
  std::function<double(const Eigen::VectorXd&)> log_prior;
  std::vector<std::string> parameter_names;
  std::function<bool(const Eigen::VectorXd&)> support_check;
};

/// Single Gaussian centering N_d(mu, Sigma); theta packs mu followed by the
/// Cholesky factor of Sigma with log-transformed diagonal. Priors: diffuse
/// N(0, 1e3 I) on mu, Wishart(d+2, I) on the precision (density expressed in
/// theta coordinates, Jacobians included).
CenteringModel gaussian_centering(int d);

/// Two-component Gaussian mixture centering with a Uniform(0,1) prior on the
/// mixture weight and the single-Gaussian priors per component. Components
/// are identified by ordering the first mean coordinate.
CenteringModel two_component_centering(int d);

/// Number of theta entries used by the packed Cholesky of a d x d matrix.
int chol_param_count(int d);
/// Unpack (log-diagonal) Cholesky parameters into the PSD matrix L L^T.
Eigen::MatrixXd unpack_chol(const Eigen::VectorXd& theta, int offset, int d);
/// Inverse of unpack_chol for building initial points from a covariance.
Eigen::VectorXd pack_chol(const Eigen::MatrixXd& sigma);

struct SkewNormalSpec {
  Eigen::VectorXd location;  // zeta
  Eigen::MatrixXd scale;     // omega; PSD, 1x1 in the scalar case
  Eigen::VectorXd slant;     // alpha

  static SkewNormalSpec scalar(double zeta, double omega, double alpha);
  static SkewNormalSpec standard(const Eigen::VectorXd& alpha);
};

/// i.i.d. draws by rejection: propose from phi_d, accept with probability
/// Phi(alpha' z); expected acceptance exactly 1/2.
Eigen::MatrixXd sample_skew_normal(const SkewNormalSpec& spec, int n, uint64_t seed);

struct SkewNormalMoments {
  double mean;
  double variance;
  double skewness;
  double excess_kurtosis;
};

/// Closed-form moments of a scalar spec.
SkewNormalMoments skew_normal_moments(const SkewNormalSpec& spec);

/// Largest skewness attainable by a skew-normal (delta -> 1 limit).
double skew_normal_max_skewness();

/// Invert (mean, variance, skewness) -> scalar spec: delta from the
/// skewness by bisection, then omega from the variance, zeta from the mean.
SkewNormalSpec match_skew_normal(double mean, double variance, double skewness);

struct GlmScoreProblem {
  Eigen::VectorXd responses;    // y (counts)
  Eigen::MatrixXd design;       // n x (d+1), intercept column first
  Eigen::VectorXd true_beta;    // generator parameters, when synthetic
  Eigen::VectorXd mle;          // beta hat by IRLS
  Eigen::MatrixXd fisher_info;  // X' diag(m) X at the MLE

  Eigen::VectorXd mean_at(const Eigen::VectorXd& beta) const;
  /// Per-observation score contributions eta_i = (y_i - m_i(beta)) x_i.
  Eigen::MatrixXd score(const Eigen::VectorXd& beta) const;
  double log_lik(const Eigen::VectorXd& beta) const;
};

/// Poisson regression with log link fitted by IRLS.
GlmScoreProblem fit_poisson_glm(const Eigen::VectorXd& y, const Eigen::MatrixXd& design);

/// x_i ~ N(5,1); log m = beta0 + beta1 x + h, h ~ (1-p) delta_0 + p N(1, 0.1^2);
/// y ~ Poisson(m). Bit-reproducible under the seed.
GlmScoreProblem poisson_contaminated_data(int n, double beta0, double beta1,
                                          double contamination, uint64_t seed);

/// Zero-mean bivariate normal centering over score contributions;
/// theta = (log s1^2, log s2^2, rho, beta0, beta1). Flat N(0, 100^2) priors
/// plus U(-1,1) on rho; rho clamped away from the boundary in the builder.
CenteringModel glm_centering(int k = 1);

}  // namespace dbetel
