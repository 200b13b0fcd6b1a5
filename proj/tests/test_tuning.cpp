#include "doctest.h"

#include <cmath>
#include <random>

#include "dbetel/errors.hpp"
#include "dbetel/math.hpp"
#include "dbetel/tuning.hpp"
#include "test_util.hpp"

using namespace dbetel;

namespace {

// Single-component Gaussian centering in 1-D with a point mass prior at
// theta0: every chain draw equals theta0 when proposal scales are zero.
CenteringModel point_mass_centering(const Eigen::VectorXd& theta0) {
  CenteringModel model = gaussian_centering(1);
  model.log_prior = [theta0](const Eigen::VectorXd& theta) {
    return (theta - theta0).cwiseAbs().maxCoeff() == 0.0
               ? 0.0
               : -std::numeric_limits<double>::infinity();
  };
  return model;
}

Eigen::MatrixXd toy_data() {
  Eigen::MatrixXd data(3, 1);
  data << -0.8, 0.1, 1.1;
  return data;
}

}  // namespace

TEST_CASE("pointwise terms are exact under a point-mass prior") {
  const Eigen::VectorXd theta0 = (Eigen::VectorXd(2) << 0.2, std::log(0.9)).finished();
  const CenteringModel centering = point_mass_centering(theta0);
  const Eigen::MatrixXd data = toy_data();
  MetricParams mp;
  mp.lambda_alpha = 2.0;
  OptConfig cfg;
  SamplerConfig sampler;
  sampler.draws = 60;
  sampler.init = theta0;
  sampler.coord_scales = Eigen::VectorXd::Zero(2);
  sampler.seed = 3;
  LooConfig loo;
  const ElpdRecord rec = elpd_loo(data, centering, 50.0, mp, cfg, sampler, loo);
  REQUIRE(rec.valid);
  const EllipticalMixture mix = centering.builder(theta0);
  for (int i = 0; i < 3; ++i) {
    CHECK(rec.pointwise[i] ==
          doctest::Approx(mix.log_pdf(data.row(i).transpose())).epsilon(1e-12));
  }
  CHECK(rec.elpd == doctest::Approx(rec.pointwise.sum()).epsilon(1e-14));
  // Fixed theta and a slack radius: no activity anywhere.
  CHECK(rec.active_fraction == 0.0);
}

TEST_CASE("se matches the sqrt(n) sd formula recomputed independently") {
  const Eigen::VectorXd theta0 = (Eigen::VectorXd(2) << 0.0, 0.0).finished();
  const CenteringModel centering = point_mass_centering(theta0);
  const Eigen::MatrixXd data = toy_data();
  MetricParams mp;
  mp.lambda_alpha = 2.0;
  OptConfig cfg;
  SamplerConfig sampler;
  sampler.draws = 60;
  sampler.init = theta0;
  sampler.coord_scales = Eigen::VectorXd::Zero(2);
  LooConfig loo;
  const ElpdRecord rec = elpd_loo(data, centering, 50.0, mp, cfg, sampler, loo);
  REQUIRE(rec.valid);
  const double mean = rec.pointwise.mean();
  double var = 0.0;
  for (int i = 0; i < rec.pointwise.size(); ++i) {
    var += std::pow(rec.pointwise[i] - mean, 2);
  }
  var /= (rec.pointwise.size() - 1);
  CHECK(rec.se == doctest::Approx(std::sqrt(3.0) * std::sqrt(var)).epsilon(1e-12));
}

TEST_CASE("permuting the data permutes the pointwise vector") {
  const Eigen::VectorXd theta0 = (Eigen::VectorXd(2) << 0.1, 0.0).finished();
  CenteringModel centering = gaussian_centering(1);
  const Eigen::MatrixXd data = toy_data();
  MetricParams mp;
  mp.lambda_alpha = 2.0;
  OptConfig cfg;
  SamplerConfig sampler;
  sampler.draws = 120;
  sampler.init = theta0;
  sampler.coord_scales = Eigen::VectorXd::Constant(2, 0.3);
  sampler.seed = 11;
  LooConfig loo;
  const double eps = 1.8;
  const ElpdRecord base = elpd_loo(data, centering, eps, mp, cfg, sampler, loo);

  const int perm[3] = {2, 0, 1};
  Eigen::MatrixXd shuffled(3, 1);
  for (int i = 0; i < 3; ++i) shuffled.row(i) = data.row(perm[i]);
  const ElpdRecord moved = elpd_loo(shuffled, centering, eps, mp, cfg, sampler, loo);
  REQUIRE(base.valid);
  REQUIRE(moved.valid);
  for (int i = 0; i < 3; ++i) {
    CHECK(moved.pointwise[i] == doctest::Approx(base.pointwise[perm[i]]).epsilon(1e-9));
  }
}

TEST_CASE("kappa softmax properties and model averaging") {
  // Synthetic two-level check through tune_epsilon: radii above the slack
  // floor keep the constraint inactive, radii below it bind.
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd data(12, 1);
  for (int i = 0; i < 12; ++i) data(i, 0) = 0.4 + 0.8 * g(rng);
  const CenteringModel centering = gaussian_centering(1);
  MetricParams mp;
  mp.lambda_alpha = 20.0;  // keep the entropic offset small on this scale
  OptConfig cfg;
  SamplerConfig sampler;
  sampler.draws = 150;
  // anchor at the data moments
  const double mean = data.col(0).mean();
  const double sd = std::sqrt(math::sample_variance(data.col(0)));
  sampler.init = (Eigen::VectorXd(2) << mean, std::log(sd)).finished();
  sampler.coord_scales = Eigen::VectorXd::Constant(2, 0.25);
  sampler.seed = 7;
  LooConfig loo;

  // Scan for the slack floor: below it no theta keeps uniform weights.
  double slack_floor_sq = 1e300;
  for (double m = mean - 1.0; m <= mean + 1.0; m += 0.05) {
    for (double ls = std::log(sd) - 1.0; ls <= std::log(sd) + 1.0; ls += 0.05) {
      AndrewWeightModel model(
          centering.builder((Eigen::VectorXd(2) << m, ls).finished()), data, mp);
      slack_floor_sq = std::min(slack_floor_sq, model.value(uniform_simplex(12)));
    }
  }
  const double floor_eps = std::sqrt(slack_floor_sq);
  std::vector<double> grid{4.0 * floor_eps, 1.4 * floor_eps, 0.97 * floor_eps,
                           0.9 * floor_eps};
  const TuneResult tuned =
      tune_epsilon(data, centering, grid, mp, cfg, sampler, loo, -1.0, false);
  CHECK(tuned.kappa.sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(tuned.h0_index >= 0);
  for (int i = 0; i < tuned.h0_index; ++i) CHECK(tuned.kappa[i] == 0.0);
  Eigen::VectorXd ma = Eigen::VectorXd::Zero(2);
  for (std::size_t i = 0; i < tuned.records.size(); ++i) {
    ma += tuned.kappa[static_cast<int>(i)] * tuned.records[i].theta_hat;
  }
  CHECK((ma - tuned.theta_ma).cwiseAbs().maxCoeff() < 1e-12);

  // shift invariance of the softmax weighting
  Eigen::VectorXd e1(3), e2(3);
  e1 << -10.0, -12.0, -11.0;
  e2 = e1.array() + 100.0;
  auto softmax_neg = [](const Eigen::VectorXd& e) {
    Eigen::ArrayXd z = (-e.array());
    z -= z.maxCoeff();
    Eigen::ArrayXd w = z.exp();
    return (w / w.sum()).eval();
  };
  CHECK((softmax_neg(e1) - softmax_neg(e2)).abs().maxCoeff() < 1e-12);

  // all-equal elpd values give uniform kappa over the active range
  Eigen::VectorXd eq = Eigen::VectorXd::Constant(4, -7.5);
  CHECK((softmax_neg(eq).array() - 0.25).abs().maxCoeff() < 1e-12);
}

TEST_CASE("tune_epsilon rejects bad grids and all-slack grids") {
  const Eigen::MatrixXd data = toy_data();
  const CenteringModel centering = gaussian_centering(1);
  MetricParams mp;
  OptConfig cfg;
  SamplerConfig sampler;
  sampler.draws = 80;
  sampler.init = (Eigen::VectorXd(2) << 0.0, 0.0).finished();
  sampler.coord_scales = Eigen::VectorXd::Constant(2, 0.3);
  LooConfig loo;
  CHECK_THROWS_AS(tune_epsilon(data, centering, {1.0, 2.0}, mp, cfg, sampler, loo),
                  InvalidInput);
  CHECK_THROWS_AS(tune_epsilon(data, centering, {500.0, 400.0}, mp, cfg, sampler, loo),
                  NoActiveEpsilon);
}
