#include "dbetel/models.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "dbetel/errors.hpp"
#include "dbetel/math.hpp"

namespace dbetel {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kMeanPriorVar = 1e3;

double diffuse_normal_logpdf(const Eigen::VectorXd& v, double var) {
  return -0.5 * v.size() * std::log(2.0 * math::kPi * var) -
         0.5 * v.squaredNorm() / var;
}

// log density of Sigma^{-1} ~ Wishart(nu0, I), expressed in the packed
// log-diagonal Cholesky coordinates of Sigma: inverse-Wishart density of
// Sigma times the Jacobians of Sigma -> L -> theta.
double wishart_prior_in_chol_coords(const Eigen::VectorXd& theta, int offset, int d) {
  const double nu0 = d + 2;
  Eigen::MatrixXd lmat = Eigen::MatrixXd::Zero(d, d);
  int idx = offset;
  double logdet_l = 0.0;
  double jac = d * std::log(2.0);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j <= i; ++j) {
      if (i == j) {
        const double lii = std::exp(theta[idx]);
        lmat(i, i) = lii;
        logdet_l += theta[idx];
        jac += (d - i + 1) * theta[idx];  // exponent d - i + 2 with 1-based rows
      } else {
        lmat(i, j) = theta[idx];
      }
      ++idx;
    }
  }
  const double logdet_sigma = 2.0 * logdet_l;
  const Eigen::MatrixXd linv = lmat.triangularView<Eigen::Lower>().solve(
      Eigen::MatrixXd::Identity(d, d));
  const double tr_sigma_inv = linv.squaredNorm();
  const double log_iw = -0.5 * nu0 * d * std::log(2.0) - math::lmvgamma(d, 0.5 * nu0) -
                        0.5 * (nu0 + d + 1) * logdet_sigma - 0.5 * tr_sigma_inv;
  return log_iw + jac;
}

}  // namespace

int chol_param_count(int d) { return d * (d + 1) / 2; }

Eigen::MatrixXd unpack_chol(const Eigen::VectorXd& theta, int offset, int d) {
  Eigen::MatrixXd lmat = Eigen::MatrixXd::Zero(d, d);
  int idx = offset;
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j <= i; ++j) {
      lmat(i, j) = (i == j) ? std::exp(theta[idx]) : theta[idx];
      ++idx;
    }
  }
  return lmat * lmat.transpose();
}

Eigen::VectorXd pack_chol(const Eigen::MatrixXd& sigma) {
  const int d = static_cast<int>(sigma.rows());
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success) throw InvalidInput("pack_chol: matrix not PD");
  const Eigen::MatrixXd lmat = llt.matrixL();
  Eigen::VectorXd theta(chol_param_count(d));
  int idx = 0;
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j <= i; ++j) {
      theta[idx++] = (i == j) ? std::log(lmat(i, i)) : lmat(i, j);
    }
  }
  return theta;
}

CenteringModel gaussian_centering(int d) {
  CenteringModel model;
  model.theta_dim = d + chol_param_count(d);
  model.parameter_names.reserve(model.theta_dim);
  for (int i = 0; i < d; ++i) model.parameter_names.push_back("mu" + std::to_string(i + 1));
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j <= i; ++j) {
      model.parameter_names.push_back("L" + std::to_string(i + 1) + std::to_string(j + 1));
    }
  }
  model.builder = [d](const Eigen::VectorXd& theta) {
    return EllipticalMixture::single_gaussian(theta.head(d), unpack_chol(theta, d, d));
  };
  model.support_check = [d](const Eigen::VectorXd& theta) {
    return theta.size() == d + chol_param_count(d) && theta.allFinite();
  };
  model.log_prior = [d, support = model.support_check](const Eigen::VectorXd& theta) {
    if (!support(theta)) return kNegInf;
    return diffuse_normal_logpdf(theta.head(d), kMeanPriorVar) +
           wishart_prior_in_chol_coords(theta, d, d);
  };
  return model;
}

CenteringModel two_component_centering(int d) {
  const int nc = chol_param_count(d);
  CenteringModel model;
  model.theta_dim = 1 + 2 * d + 2 * nc;
  model.parameter_names.push_back("omega");
  for (int c = 1; c <= 2; ++c) {
    for (int i = 0; i < d; ++i) {
      model.parameter_names.push_back("mu" + std::to_string(c) + "_" + std::to_string(i + 1));
    }
  }
  for (int c = 1; c <= 2; ++c) {
    for (int i = 0; i < d; ++i) {
      for (int j = 0; j <= i; ++j) {
        model.parameter_names.push_back("L" + std::to_string(c) + "_" +
                                        std::to_string(i + 1) + std::to_string(j + 1));
      }
    }
  }
  model.builder = [d, nc](const Eigen::VectorXd& theta) {
    const double omega = std::clamp(theta[0], 1e-6, 1.0 - 1e-6);
    std::vector<MixtureComponent> comps;
    comps.push_back({omega, theta.segment(1, d), unpack_chol(theta, 1 + 2 * d, d)});
    comps.push_back({1.0 - omega, theta.segment(1 + d, d),
                     unpack_chol(theta, 1 + 2 * d + nc, d)});
    return EllipticalMixture(std::move(comps));
  };
  model.support_check = [d, dim = model.theta_dim](const Eigen::VectorXd& theta) {
    if (theta.size() != dim || !theta.allFinite()) return false;
    if (theta[0] <= 0.0 || theta[0] >= 1.0) return false;
    return theta[1] <= theta[1 + d];  // identifiability: mu1_x <= mu2_x
  };
  model.log_prior = [d, nc, support = model.support_check](const Eigen::VectorXd& theta) {
    if (!support(theta)) return kNegInf;
    // log 2 restores normalization under the ordering constraint.
    return std::log(2.0) + diffuse_normal_logpdf(theta.segment(1, d), kMeanPriorVar) +
           diffuse_normal_logpdf(theta.segment(1 + d, d), kMeanPriorVar) +
           wishart_prior_in_chol_coords(theta, 1 + 2 * d, d) +
           wishart_prior_in_chol_coords(theta, 1 + 2 * d + nc, d);
  };
  return model;
}

SkewNormalSpec SkewNormalSpec::scalar(double zeta, double omega, double alpha) {
  SkewNormalSpec s;
  s.location = Eigen::VectorXd::Constant(1, zeta);
  s.scale = Eigen::MatrixXd::Constant(1, 1, omega);
  s.slant = Eigen::VectorXd::Constant(1, alpha);
  return s;
}

SkewNormalSpec SkewNormalSpec::standard(const Eigen::VectorXd& alpha) {
  SkewNormalSpec s;
  const Eigen::Index d = alpha.size();
  s.location = Eigen::VectorXd::Zero(d);
  s.scale = Eigen::MatrixXd::Identity(d, d);
  s.slant = alpha;
  return s;
}

Eigen::MatrixXd sample_skew_normal(const SkewNormalSpec& spec, int n, uint64_t seed) {
  if (n < 1) throw InvalidInput("sample_skew_normal: n must be >= 1");
  const Eigen::Index d = spec.location.size();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::MatrixXd out(n, d);
  Eigen::VectorXd z(d);
  for (int i = 0; i < n;) {
    for (Eigen::Index j = 0; j < d; ++j) z[j] = gauss(rng);
    if (unif(rng) >= math::norm_cdf(spec.slant.dot(z))) continue;
    out.row(i++) = (spec.location + spec.scale * z).transpose();
  }
  return out;
}

SkewNormalMoments skew_normal_moments(const SkewNormalSpec& spec) {
  if (spec.location.size() != 1) {
    throw InvalidInput("skew_normal_moments: scalar spec required");
  }
  const double zeta = spec.location[0];
  const double omega = spec.scale(0, 0);
  const double alpha = spec.slant[0];
  const double delta = alpha / std::sqrt(1.0 + alpha * alpha);
  const double bd = std::sqrt(2.0 / math::kPi) * delta;
  SkewNormalMoments m;
  m.mean = zeta + omega * bd;
  m.variance = omega * omega * (1.0 - bd * bd);
  m.skewness = 0.5 * (4.0 - math::kPi) * bd * bd * bd / std::pow(1.0 - bd * bd, 1.5);
  m.excess_kurtosis =
      2.0 * (math::kPi - 3.0) * bd * bd * bd * bd / std::pow(1.0 - bd * bd, 2.0);
  return m;
}

double skew_normal_max_skewness() {
  const double b = std::sqrt(2.0 / math::kPi);
  return 0.5 * (4.0 - math::kPi) * b * b * b / std::pow(1.0 - b * b, 1.5);
}

SkewNormalSpec match_skew_normal(double mean, double variance, double skewness) {
  if (variance <= 0.0) throw InvalidInput("match_skew_normal: variance must be > 0");
  if (std::abs(skewness) >= skew_normal_max_skewness()) {
    throw UnattainableSkewness("match_skew_normal: |skewness| exceeds the attainable bound");
  }
  const double target = std::abs(skewness);
  const double b = std::sqrt(2.0 / math::kPi);
  const auto skew_of = [b](double delta) {
    const double bd = b * delta;
    return 0.5 * (4.0 - math::kPi) * bd * bd * bd / std::pow(1.0 - bd * bd, 1.5);
  };
  double delta = target == 0.0
                     ? 0.0
                     : math::invert_monotone(skew_of, target, 0.0, 1.0 - 1e-9, 1e-14, 0);
  if (skewness < 0.0) delta = -delta;
  const double bd = b * delta;
  const double omega = std::sqrt(variance / (1.0 - bd * bd));
  const double zeta = mean - omega * bd;
  const double alpha = delta / std::sqrt(1.0 - delta * delta);
  return SkewNormalSpec::scalar(zeta, omega, alpha);
}

Eigen::VectorXd GlmScoreProblem::mean_at(const Eigen::VectorXd& beta) const {
  return (design * beta).array().exp();
}

Eigen::MatrixXd GlmScoreProblem::score(const Eigen::VectorXd& beta) const {
  const Eigen::VectorXd resid = responses - mean_at(beta);
  return design.array().colwise() * resid.array();
}

double GlmScoreProblem::log_lik(const Eigen::VectorXd& beta) const {
  const Eigen::VectorXd lin = design * beta;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < responses.size(); ++i) {
    acc += responses[i] * lin[i] - std::exp(lin[i]) - std::lgamma(responses[i] + 1.0);
  }
  return acc;
}

GlmScoreProblem fit_poisson_glm(const Eigen::VectorXd& y, const Eigen::MatrixXd& design) {
  if (y.size() != design.rows()) throw InvalidInput("poisson glm: size mismatch");
  GlmScoreProblem prob;
  prob.responses = y;
  prob.design = design;

  const Eigen::Index p = design.cols();
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  beta[0] = std::log(std::max(1e-8, y.mean()));
  bool ok = false;
  for (int it = 0; it < 100; ++it) {
    const Eigen::VectorXd m = (design * beta).array().exp();
    if (!m.allFinite()) throw IrlsDivergence("poisson glm: mean overflow");
    const Eigen::MatrixXd xw = design.array().colwise() * m.array();
    const Eigen::MatrixXd info = design.transpose() * xw;
    const Eigen::VectorXd grad = design.transpose() * (y - m);
    const Eigen::VectorXd step = info.ldlt().solve(grad);
    if (!step.allFinite()) throw IrlsDivergence("poisson glm: singular information");
    beta += step;
    if (step.cwiseAbs().maxCoeff() < 1e-12) {
      ok = true;
      break;
    }
  }
  if (!ok) throw IrlsDivergence("poisson glm: IRLS did not converge");
  prob.mle = beta;
  const Eigen::VectorXd m = (design * beta).array().exp();
  prob.fisher_info = design.transpose() * (design.array().colwise() * m.array()).matrix();
  return prob;
}

GlmScoreProblem poisson_contaminated_data(int n, double beta0, double beta1,
                                          double contamination, uint64_t seed) {
  if (contamination < 0.0 || contamination >= 1.0) {
    throw InvalidInput("poisson_contaminated_data: contamination must be in [0,1)");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::MatrixXd design(n, 2);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    const double x = 5.0 + gauss(rng);
    double h = 0.0;
    if (unif(rng) < contamination) h = 1.0 + 0.1 * gauss(rng);
    const double m = std::exp(beta0 + beta1 * x + h);
    std::poisson_distribution<long long> pois(m);
    design(i, 0) = 1.0;
    design(i, 1) = x;
    y[i] = static_cast<double>(pois(rng));
  }
  GlmScoreProblem prob = fit_poisson_glm(y, design);
  prob.true_beta = Eigen::Vector2d(beta0, beta1);
  return prob;
}

CenteringModel glm_centering(int k) {
  if (k != 1) throw InvalidInput("glm_centering: only the single-component case is supported");
  CenteringModel model;
  model.theta_dim = 5;
  model.parameter_names = {"log_s1sq", "log_s2sq", "rho", "beta0", "beta1"};
  model.builder = [](const Eigen::VectorXd& theta) {
    const double s1 = std::exp(0.5 * theta[0]);
    const double s2 = std::exp(0.5 * theta[1]);
    const double rho = std::clamp(theta[2], -1.0 + 1e-6, 1.0 - 1e-6);
    Eigen::MatrixXd scale(2, 2);
    scale << s1 * s1, rho * s1 * s2, rho * s1 * s2, s2 * s2;
    return EllipticalMixture::single_gaussian(Eigen::VectorXd::Zero(2), scale);
  };
  model.support_check = [](const Eigen::VectorXd& theta) {
    return theta.size() == 5 && theta.allFinite() && std::abs(theta[2]) < 1.0;
  };
  model.log_prior = [support = model.support_check](const Eigen::VectorXd& theta) {
    if (!support(theta)) return kNegInf;
    const double var = 100.0 * 100.0;
    double acc = -std::log(2.0);  // U(-1, 1) on rho
    for (int i : {0, 1, 3, 4}) {
      acc += -0.5 * std::log(2.0 * math::kPi * var) - 0.5 * theta[i] * theta[i] / var;
    }
    return acc;
  };
  return model;
}

}  // namespace dbetel
