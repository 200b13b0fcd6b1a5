#include "doctest.h"

#include <cmath>
#include <random>

#include "dbetel/entropy_solver.hpp"
#include "dbetel/errors.hpp"
#include "dbetel/transport.hpp"
#include "test_util.hpp"

using namespace dbetel;

namespace {

struct Fixture1d {
  EllipticalMixture mix;
  Eigen::MatrixXd atoms;
  MetricParams mp;

  static Fixture1d make(double m, double var, std::initializer_list<double> xs,
                        double lambda_alpha) {
    Eigen::VectorXd mean(1);
    mean << m;
    Eigen::MatrixXd scale(1, 1);
    scale << var;
    Eigen::MatrixXd a(static_cast<Eigen::Index>(xs.size()), 1);
    Eigen::Index i = 0;
    for (double x : xs) a(i++, 0) = x;
    MetricParams mp;
    mp.lambda_alpha = lambda_alpha;
    return {EllipticalMixture::single_gaussian(mean, scale), a, mp};
  }

  double oracle_distance(const Eigen::VectorXd& w) const {
    std::vector<double> atom_v(atoms.data(), atoms.data() + atoms.rows());
    std::vector<double> w_v(w.data(), w.data() + w.size());
    return oracle::andrew_1d_gauss_oracle(mix.components()[0].mean[0],
                                          std::sqrt(mix.components()[0].scale(0, 0)),
                                          atom_v, w_v, mp.lambda_alpha);
  }
};

}  // namespace

TEST_CASE("entropy objective identity: log prod w^-w = log n - KL(w || uniform)") {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    const Eigen::VectorXd w = oracle::random_simplex(6, rng);
    const double ent = -(w.array() * w.array().log()).sum();
    const double kl = (w.array() * (w.array() * 6.0).log()).sum();
    CHECK(ent == doctest::Approx(std::log(6.0) - kl).epsilon(1e-12));
  }
}

TEST_CASE("primal: slack constraint returns exactly uniform weights") {
  const auto fx = Fixture1d::make(0.0, 1.0, {-1.0, 0.0, 1.0}, 2.0);
  AndrewWeightModel model(fx.mix, fx.atoms, fx.mp);
  OptConfig cfg;
  const DcmSolution sol = solve_dcm_primal(model, 100.0, cfg);
  CHECK_FALSE(sol.constraint_active);
  CHECK(sol.status == SolveStatus::Converged);
  CHECK((sol.weights.array() - 1.0 / 3.0).abs().maxCoeff() < 1e-12);
  CHECK(sol.log_likelihood == doctest::Approx(-3.0 * std::log(3.0)));
}

TEST_CASE("primal matches the barycentric grid oracle on binding instances") {
  std::mt19937_64 rng(101);
  const auto grid = oracle::simplex3_grid(400);
  for (int rep = 0; rep < 3; ++rep) {
    std::normal_distribution<double> g(0.0, 1.0);
    const double m = 0.3 * g(rng);
    const double var = 0.2 + 0.3 * std::abs(g(rng));
    const auto fx = Fixture1d::make(m, var, {g(rng) - 1.0, 0.3 * g(rng), g(rng) + 1.2}, 2.0);
    AndrewWeightModel model(fx.mix, fx.atoms, fx.mp);
    auto dist = [&](const Eigen::Vector3d& w) { return fx.oracle_distance(w); };

    // Pick a binding epsilon between the best achievable and the uniform
    // distance, then brute-force the max-entropy feasible point.
    double dmin = std::numeric_limits<double>::infinity();
    for (const auto& w : grid) dmin = std::min(dmin, dist(w));
    const double duni = fx.oracle_distance(uniform_simplex(3));
    REQUIRE(dmin < duni);
    const double eps_sq = std::sqrt(dmin * duni);

    const Eigen::Vector3d best =
        oracle::simplex3_constrained_entropy_argmax(dist, eps_sq);

    OptConfig cfg;
    const DcmSolution sol = solve_dcm_primal(model, std::sqrt(eps_sq), cfg);
    CHECK(sol.status == SolveStatus::Converged);
    CHECK(sol.constraint_active);
    for (int i = 0; i < 3; ++i) {
      CHECK(std::abs(sol.weights[i] - best[i]) < 5e-3);
    }
    CHECK(sol.log_likelihood == doctest::Approx(sol.weights.array().log().sum()));
    // No sampled feasible point beats the solver entropy.
    double sol_ent = -(sol.weights.array() * sol.weights.array().log()).sum();
    for (int s = 0; s < 10000; ++s) {
      const Eigen::VectorXd w = oracle::random_simplex(3, rng);
      if (model.value(w) > eps_sq) continue;
      const double ent = -(w.array() * w.array().log()).sum();
      CHECK(ent <= sol_ent + 1e-5);
    }
  }
}

TEST_CASE("primal/dual consistency via the reported multiplier") {
  const auto fx = Fixture1d::make(0.25, 0.3, {-1.1, 0.4, 1.6}, 2.0);
  AndrewWeightModel model(fx.mix, fx.atoms, fx.mp);
  OptConfig cfg;
  const double duni = model.value(uniform_simplex(3));
  const double eps = std::sqrt(0.55 * duni);
  const DcmSolution primal = solve_dcm_primal(model, eps, cfg);
  REQUIRE(primal.status == SolveStatus::Converged);
  REQUIRE(primal.constraint_active);
  CHECK(primal.dual_multiplier > 0.0);
  const DcmSolution dual = solve_dcm_dual(model, primal.dual_multiplier, cfg);
  CHECK((dual.weights - primal.weights).cwiseAbs().maxCoeff() < 1e-5);
  CHECK(std::sqrt(dual.distance_sq) == doctest::Approx(eps).epsilon(1e-4));
}

TEST_CASE("primal reports infeasible instances instead of throwing") {
  const auto fx = Fixture1d::make(0.0, 0.5, {-1.0, 0.1, 1.3}, 2.0);
  AndrewWeightModel model(fx.mix, fx.atoms, fx.mp);
  OptConfig cfg;
  const DcmSolution sol = solve_dcm_primal(model, 1e-4, cfg);
  CHECK(sol.status == SolveStatus::Infeasible);
}

TEST_CASE("dual: lambda 0 gives uniform, distance monotone in lambda") {
  const auto fx = Fixture1d::make(0.4, 0.2, {-0.9, 0.2, 1.1, 2.0}, 2.0);
  AndrewWeightModel model(fx.mix, fx.atoms, fx.mp);
  OptConfig cfg;
  const DcmSolution zero = solve_dcm_dual(model, 0.0, cfg);
  CHECK_FALSE(zero.constraint_active);
  CHECK((zero.weights.array() - 0.25).abs().maxCoeff() < 1e-12);

  double prev = std::numeric_limits<double>::infinity();
  for (double lam : {0.0, 1.0, 10.0, 100.0}) {
    const DcmSolution s = solve_dcm_dual(model, lam, cfg);
    CHECK(s.distance_sq <= prev + 1e-9);
    prev = s.distance_sq;
  }
}

TEST_CASE("dual path on a log lambda grid is nonincreasing without collapses") {
  const auto fx = Fixture1d::make(0.0, 0.4, {-1.5, -0.2, 0.7, 1.8}, 2.0);
  AndrewWeightModel model(fx.mix, fx.atoms, fx.mp);
  OptConfig cfg;
  double prev_eps = std::numeric_limits<double>::infinity();
  for (double lam = 0.25; lam <= 512.0; lam *= 2.0) {
    const DcmSolution s = solve_dcm_dual(model, lam, cfg);
    const double eps = std::sqrt(std::max(0.0, s.distance_sq));
    CHECK(eps <= prev_eps * (1.0 + 1e-7));
    if (std::isfinite(prev_eps)) CHECK(eps > 0.3 * prev_eps);
    prev_eps = eps;
  }
}

TEST_CASE("dual concentrates mass when the centering excludes an atom") {
  Eigen::MatrixXd atoms(3, 1);
  atoms << 0.0, 1.0, 2.0;
  std::vector<MixtureComponent> comps;
  Eigen::VectorXd m0(1), m1(1);
  m0 << 0.0;
  m1 << 1.0;
  comps.push_back({0.5, m0, Eigen::MatrixXd::Zero(1, 1)});
  comps.push_back({0.5, m1, Eigen::MatrixXd::Zero(1, 1)});
  const EllipticalMixture mix(comps);
  MetricParams mp;
  mp.lambda_alpha = 4.0;
  AndrewWeightModel model(mix, atoms, mp);
  OptConfig cfg;
  const DcmSolution s = solve_dcm_dual(model, 1000.0, cfg);
  CHECK(s.weights[2] < 1e-3);
  CHECK(s.weights[0] == doctest::Approx(0.5).epsilon(0.05));
}

TEST_CASE("etel: symmetric data gives zero dual and uniform weights") {
  Eigen::MatrixXd g(2, 1);
  g << -1.0, 1.0;
  OptConfig cfg;
  const EtelSolution s = solve_etel_mcm(g, cfg);
  CHECK(s.hull_ok);
  CHECK(s.eta[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(s.weights[0] == doctest::Approx(0.5).epsilon(1e-10));
}

TEST_CASE("etel closed form on the {-1, 2} fixture") {
  Eigen::MatrixXd g(2, 1);
  g << -1.0, 2.0;
  OptConfig cfg;
  const EtelSolution s = solve_etel_mcm(g, cfg);
  REQUIRE(s.hull_ok);
  CHECK(std::abs(s.eta[0] - (-std::log(2.0) / 3.0)) < 1e-10);
  CHECK(s.weights[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-9));
  CHECK(s.weights[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-9));
  CHECK(std::abs(s.weights.dot(g.col(0))) < 1e-8);
  CHECK(s.log_likelihood == doctest::Approx(std::log(2.0 / 3.0) + std::log(1.0 / 3.0)));
}

TEST_CASE("etel hull violation returns the minus-infinity sentinel") {
  Eigen::MatrixXd g(2, 1);
  g << 1.0, 2.0;
  OptConfig cfg;
  const EtelSolution s = solve_etel_mcm(g, cfg);
  CHECK_FALSE(s.hull_ok);
  CHECK(std::isinf(s.log_likelihood));
  CHECK(s.log_likelihood < 0);
}

TEST_CASE("etel satisfies the moment constraint on random 2-d instances") {
  std::mt19937_64 rng(77);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int rep = 0; rep < 10; ++rep) {
    Eigen::MatrixXd gv(30, 2);
    for (int i = 0; i < 30; ++i) {
      gv(i, 0) = g(rng) + 0.3;
      gv(i, 1) = g(rng) - 0.1;
    }
    OptConfig cfg;
    const EtelSolution s = solve_etel_mcm(gv, cfg);
    REQUIRE(s.hull_ok);
    CHECK((gv.transpose() * s.weights).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(s.weights.sum() == doctest::Approx(1.0).epsilon(1e-12));
  }
}
