#include "doctest.h"

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "dbetel/errors.hpp"
#include "dbetel/math.hpp"
#include "dbetel/models.hpp"
#include "test_util.hpp"

using namespace dbetel;

TEST_CASE("gaussian centering builder and prior oracle at mu=0, Sigma=I") {
  const CenteringModel model = gaussian_centering(2);
  CHECK(model.theta_dim == 5);
  const Eigen::VectorXd theta = Eigen::VectorXd::Zero(5);
  const EllipticalMixture mix = model.builder(theta);
  CHECK(mix.size() == 1);
  CHECK(mix.nu_h() == 1.0);
  CHECK((mix.components()[0].scale - Eigen::MatrixXd::Identity(2, 2)).norm() < 1e-14);

  // Independent route: normal density on the means, Wishart(4, I) density of
  // the precision at I, Jacobians of precision -> covariance -> packed
  // Cholesky with log-diagonal.
  const double log_norm = -std::log(2000.0 * math::kPi);
  const double lmv = 0.5 * std::log(math::kPi) + std::lgamma(2.0) + std::lgamma(1.5);
  const double log_wishart = -0.5 * 2.0 - 4.0 * std::log(2.0) - lmv;  // at P = I
  const double jac_inverse = 0.0;  // |Sigma|^{-(d+1)} at Sigma = I
  const double jac_chol = 2.0 * std::log(2.0);
  const double expect = log_norm + log_wishart + jac_inverse + jac_chol;
  CHECK(model.log_prior(theta) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("cholesky packing round trip") {
  const CenteringModel model = gaussian_centering(2);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0.0, 0.3);
  Eigen::VectorXd theta(5);
  for (int i = 0; i < 5; ++i) theta[i] = g(rng);
  CHECK(std::isfinite(model.log_prior(theta)));
  const Eigen::MatrixXd sigma = unpack_chol(theta, 2, 2);
  const Eigen::VectorXd packed = pack_chol(sigma);
  CHECK((packed - theta.tail(3)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("two component centering: clamping, ordering, prior") {
  const CenteringModel model = two_component_centering(2);
  CHECK(model.theta_dim == 11);
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(11);
  theta[0] = 1.0;  // omega at the boundary: clamped inside the builder
  theta[3] = 1.0;  // mu2_x > mu1_x keeps the ordering valid
  const EllipticalMixture mix = model.builder(theta);
  CHECK(mix.components()[0].weight == doctest::Approx(1.0 - 1e-6));
  CHECK_FALSE(model.support_check(theta));  // omega = 1 is outside the prior support

  theta[0] = 0.4;
  CHECK(model.support_check(theta));
  CHECK(std::isfinite(model.log_prior(theta)));
  theta[1] = 2.0;
  theta[3] = -2.0;  // violates mu1_x <= mu2_x
  CHECK(model.log_prior(theta) == -std::numeric_limits<double>::infinity());
}

TEST_CASE("skew normal sampling: alpha = 0 reduces to the standard normal") {
  const auto spec = SkewNormalSpec::standard(Eigen::VectorXd::Zero(2));
  const Eigen::MatrixXd x = sample_skew_normal(spec, 100000, 99);
  const Eigen::VectorXd mean = x.colwise().mean();
  CHECK(mean.cwiseAbs().maxCoeff() < 3.0 / std::sqrt(100000.0));
  for (int j = 0; j < 2; ++j) {
    CHECK(math::sample_variance(x.col(j)) == doctest::Approx(1.0).epsilon(0.03));
  }
}

TEST_CASE("skew normal sampling: marginal skewness matches the delta formula") {
  Eigen::VectorXd alpha(2);
  alpha << 3.5, 3.5;
  const Eigen::MatrixXd x = sample_skew_normal(SkewNormalSpec::standard(alpha), 100000, 7);
  // Marginal slant of a standard multivariate skew-normal coordinate.
  const double delta = 3.5 / std::sqrt(1.0 + alpha.squaredNorm());
  const double bd = std::sqrt(2.0 / math::kPi) * delta;
  const double gamma = 0.5 * (4.0 - math::kPi) * bd * bd * bd / std::pow(1.0 - bd * bd, 1.5);
  const double se = std::sqrt(6.0 / 100000.0);
  for (int j = 0; j < 2; ++j) {
    const double sk = math::sample_skewness(x.col(j));
    CHECK(sk > 0.0);
    CHECK(std::abs(sk - gamma) < 3.0 * se);
  }
}

TEST_CASE("skew normal rejection acceptance rate is one half") {
  Eigen::VectorXd alpha(2);
  alpha << 3.5, 3.5;
  std::mt19937_64 rng(11);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  int accept = 0;
  const int m = 100000;
  Eigen::VectorXd z(2);
  for (int i = 0; i < m; ++i) {
    z << gauss(rng), gauss(rng);
    if (unif(rng) < math::norm_cdf(alpha.dot(z))) ++accept;
  }
  CHECK(std::abs(double(accept) / m - 0.5) < 0.01);
}

TEST_CASE("skew normal moments and matching round trip") {
  const auto a0 = SkewNormalSpec::scalar(0.7, 2.0, 0.0);
  const auto m0 = skew_normal_moments(a0);
  CHECK(m0.mean == doctest::Approx(0.7));
  CHECK(m0.variance == doctest::Approx(4.0));
  CHECK(m0.skewness == doctest::Approx(0.0));

  for (double gamma : {0.5, -0.3, 0.9}) {
    const SkewNormalSpec spec = match_skew_normal(0.0, 1.0, gamma);
    const auto m = skew_normal_moments(spec);
    CHECK(m.mean == doctest::Approx(0.0).epsilon(1e-8));
    CHECK(m.variance == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(m.skewness == doctest::Approx(gamma).epsilon(1e-8));
  }
  // near the attainable boundary
  const SkewNormalSpec edge = match_skew_normal(0.0, 1.0, 0.995);
  const double delta = edge.slant[0] / std::sqrt(1.0 + edge.slant[0] * edge.slant[0]);
  CHECK(delta < 1.0 - 1e-9);
  CHECK(skew_normal_moments(edge).skewness == doctest::Approx(0.995).epsilon(1e-7));
  CHECK_THROWS_AS(match_skew_normal(0.0, 1.0, 1.2), UnattainableSkewness);
}

TEST_CASE("contaminated poisson generator: clean-data consistency") {
  const GlmScoreProblem prob = poisson_contaminated_data(5000, 5.0, 1.0, 0.0, 31);
  const Eigen::MatrixXd cov = prob.fisher_info.inverse();
  CHECK(std::abs(prob.mle[0] - 5.0) < 3.0 * std::sqrt(cov(0, 0)));
  CHECK(std::abs(prob.mle[1] - 1.0) < 3.0 * std::sqrt(cov(1, 1)));
}

TEST_CASE("score columns sum to zero at the MLE") {
  for (uint64_t seed : {1ull, 2ull, 3ull}) {
    const GlmScoreProblem prob = poisson_contaminated_data(100, 5.0, 1.0, 0.1, seed);
    const Eigen::MatrixXd eta = prob.score(prob.mle);
    const double scale = eta.cwiseAbs().maxCoeff();
    CHECK((eta.colwise().sum().cwiseAbs() / scale).maxCoeff() < 1e-6);
  }
}

TEST_CASE("fisher information matches the finite-difference hessian") {
  const GlmScoreProblem prob = poisson_contaminated_data(80, 2.0, 0.3, 0.0, 17);
  const double h = 1e-5;
  Eigen::MatrixXd hess(2, 2);
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      Eigen::VectorXd bpp = prob.mle, bpm = prob.mle, bmp = prob.mle, bmm = prob.mle;
      bpp[i] += h; bpp[j] += h;
      bpm[i] += h; bpm[j] -= h;
      bmp[i] -= h; bmp[j] += h;
      bmm[i] -= h; bmm[j] -= h;
      hess(i, j) = (prob.log_lik(bpp) - prob.log_lik(bpm) - prob.log_lik(bmp) +
                    prob.log_lik(bmm)) / (4.0 * h * h);
    }
  }
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      CHECK(prob.fisher_info(i, j) == doctest::Approx(-hess(i, j)).epsilon(1e-4));
    }
  }
}

TEST_CASE("generators are bit-reproducible under a fixed seed") {
  const GlmScoreProblem a = poisson_contaminated_data(50, 5.0, 1.0, 0.12, 77);
  const GlmScoreProblem b = poisson_contaminated_data(50, 5.0, 1.0, 0.12, 77);
  CHECK((a.responses - b.responses).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.design - b.design).cwiseAbs().maxCoeff() == 0.0);
  const Eigen::MatrixXd s1 =
      sample_skew_normal(SkewNormalSpec::standard(Eigen::Vector2d(2, 2)), 10, 5);
  const Eigen::MatrixXd s2 =
      sample_skew_normal(SkewNormalSpec::standard(Eigen::Vector2d(2, 2)), 10, 5);
  CHECK((s1 - s2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("glm centering: identity covariance and prior sums") {
  const CenteringModel model = glm_centering(1);
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(5);
  const EllipticalMixture mix = model.builder(theta);
  CHECK((mix.components()[0].scale - Eigen::MatrixXd::Identity(2, 2)).norm() < 1e-12);

  const double var = 1e4;
  const double expect = -std::log(2.0) + 4.0 * (-0.5 * std::log(2.0 * math::kPi * var));
  CHECK(model.log_prior(theta) == doctest::Approx(expect).epsilon(1e-12));

  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int rep = 0; rep < 10000; ++rep) {
    theta << 2.0 * g(rng), 2.0 * g(rng), u(rng), 0.0, 0.0;
    const EllipticalMixture m = model.builder(theta);  // ctor validates PSD
    CHECK(m.dim() == 2);
  }
}
