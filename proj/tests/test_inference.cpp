#include "doctest.h"

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "dbetel/errors.hpp"
#include "dbetel/inference.hpp"
#include "dbetel/math.hpp"
#include "test_util.hpp"

using namespace dbetel;

namespace {

LogPosterior std_normal_target() {
  LogPosterior post;
  post.kind = LogPosterior::Kind::Parametric;
  post.dim = 1;
  post.log_prior = [](const Eigen::VectorXd&) { return 0.0; };
  post.log_lik = [](const Eigen::VectorXd& t) { return -0.5 * t.squaredNorm(); };
  return post;
}

}  // namespace

TEST_CASE("mh recovers standard normal moments") {
  const LogPosterior post = std_normal_target();
  const Chain chain = mh_sample(post, Eigen::VectorXd::Zero(1),
                                ProposalSpec::coordinatewise(Eigen::VectorXd::Constant(1, 2.4)),
                                100000, -1, 42);
  CHECK(std::abs(chain.draws.col(0).mean()) < 0.05);
  CHECK(math::sample_variance(chain.draws.col(0)) == doctest::Approx(1.0).epsilon(0.1));
  CHECK(chain.acceptance_rate > 0.05);
  CHECK(chain.acceptance_rate < 0.95);
}

TEST_CASE("mh is byte-identical under a fixed seed") {
  const LogPosterior post = std_normal_target();
  const auto prop = ProposalSpec::coordinatewise(Eigen::VectorXd::Constant(1, 1.0));
  const Chain a = mh_sample(post, Eigen::VectorXd::Zero(1), prop, 2000, 100, 7);
  const Chain b = mh_sample(post, Eigen::VectorXd::Zero(1), prop, 2000, 100, 7);
  CHECK((a.draws - b.draws).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.log_post - b.log_post).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("detailed balance of the random-walk acceptance ratio") {
  const LogPosterior post = std_normal_target();
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int rep = 0; rep < 50; ++rep) {
    Eigen::VectorXd a(1), b(1);
    a << g(rng);
    b << g(rng);
    const double la = post.eval(a), lb = post.eval(b);
    const double fwd = std::min(1.0, std::exp(lb - la));
    const double bwd = std::min(1.0, std::exp(la - lb));
    // pi(a) q(a->b) alpha(a->b) == pi(b) q(b->a) alpha(b->a), symmetric q
    CHECK(std::exp(la) * fwd == doctest::Approx(std::exp(lb) * bwd).epsilon(1e-12));
  }
}

TEST_CASE("mh throws AllRejected on a spike target") {
  LogPosterior post;
  post.dim = 1;
  post.log_prior = [](const Eigen::VectorXd&) { return 0.0; };
  post.log_lik = [](const Eigen::VectorXd& t) {
    return std::abs(t[0]) < 1e-12 ? 0.0 : -std::numeric_limits<double>::infinity();
  };
  CHECK_THROWS_AS(mh_sample(post, Eigen::VectorXd::Zero(1),
                            ProposalSpec::coordinatewise(Eigen::VectorXd::Ones(1)), 200,
                            20, 5),
                  AllRejected);
}

TEST_CASE("one-step proposal covariance") {
  CHECK(glm_one_step_proposal(Eigen::MatrixXd::Identity(2, 2),
                              Eigen::MatrixXd::Identity(2, 2), 0.0)
            .cwiseAbs()
            .maxCoeff() == 0.0);
  const Eigen::MatrixXd cov = glm_one_step_proposal(Eigen::MatrixXd::Identity(2, 2),
                                                    Eigen::MatrixXd::Identity(2, 2), 0.7);
  CHECK((cov - 0.7 * Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-14);

  std::mt19937_64 rng(9);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int rep = 0; rep < 1000; ++rep) {
    Eigen::MatrixXd a(2, 2), jac(5, 2);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) a(i, j) = g(rng);
    const Eigen::MatrixXd fisher =
        a * a.transpose() + 0.1 * Eigen::MatrixXd::Identity(2, 2);
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 2; ++j) jac(i, j) = g(rng);
    const Eigen::MatrixXd c = glm_one_step_proposal(jac, fisher, 1.3);
    CHECK((c - c.transpose()).cwiseAbs().maxCoeff() < 1e-10);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c);
    CHECK(es.eigenvalues().minCoeff() > -1e-10);
  }
  CHECK_THROWS_AS(glm_one_step_proposal(Eigen::MatrixXd::Identity(2, 2),
                                        Eigen::MatrixXd::Zero(2, 2), 1.0),
                  SingularInformation);
}

namespace {

struct ConjugateFixture {
  Eigen::VectorXd data;
  double tau_sq = 4.0;
  double post_mean, post_var;

  explicit ConjugateFixture(int n, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    data.resize(n);
    for (int i = 0; i < n; ++i) data[i] = 0.8 + g(rng);
    post_var = tau_sq / (n * tau_sq + 1.0);
    post_mean = tau_sq * data.sum() / (n * tau_sq + 1.0);
  }

  LogPosterior posterior() const {
    LogPosterior post;
    post.kind = LogPosterior::Kind::Parametric;
    post.dim = 1;
    post.log_prior = [t = tau_sq](const Eigen::VectorXd& th) {
      return -0.5 * std::log(2.0 * math::kPi * t) - 0.5 * th[0] * th[0] / t;
    };
    post.log_lik = [d = data](const Eigen::VectorXd& th) {
      return -0.5 * d.size() * std::log(2.0 * math::kPi) -
             0.5 * (d.array() - th[0]).square().sum();
    };
    return post;
  }

  double analytic_log_marginal() const {
    const int n = static_cast<int>(data.size());
    const double det = 1.0 + n * tau_sq;
    const double quad =
        data.squaredNorm() - tau_sq * data.sum() * data.sum() / (1.0 + n * tau_sq);
    return -0.5 * n * std::log(2.0 * math::kPi) - 0.5 * std::log(det) - 0.5 * quad;
  }
};

}  // namespace

TEST_CASE("chib identity is exact with an analytic posterior ordinate") {
  const ConjugateFixture fx(20, 13);
  const LogPosterior post = fx.posterior();
  const Chain chain = mh_sample(post, Eigen::VectorXd::Zero(1),
                                ProposalSpec::coordinatewise(Eigen::VectorXd::Constant(1, 0.6)),
                                4000, -1, 21);
  const std::function<double(const Eigen::VectorXd&)> ordinate =
      [&](const Eigen::VectorXd& th) {
        return math::norm_pdf((th[0] - fx.post_mean) / std::sqrt(fx.post_var)) /
               std::sqrt(fx.post_var);
      };
  const double got = chib_log_marginal(post, chain, nullptr, &ordinate);
  CHECK(got == doctest::Approx(fx.analytic_log_marginal()).epsilon(1e-10));
}

TEST_CASE("chib with KDE ordinate approaches the analytic marginal") {
  const ConjugateFixture fx(20, 13);
  const LogPosterior post = fx.posterior();
  const auto prop = ProposalSpec::coordinatewise(Eigen::VectorXd::Constant(1, 0.6));
  const Chain chain = mh_sample(post, Eigen::VectorXd::Zero(1), prop, 20000, -1, 21);
  const double got = chib_log_marginal(post, chain);
  CHECK(std::abs(got - fx.analytic_log_marginal()) < 0.1);

  const Chain chain2 = mh_sample(post, Eigen::VectorXd::Zero(1), prop, 20000, -1, 77);
  const double got2 = chib_log_marginal(post, chain2);
  CHECK(std::abs(got - got2) < 0.1);
}

TEST_CASE("posterior model probability is the softmax of log marginals") {
  const double m1 = -104.2, m2 = -101.7;
  const double p1 = 1.0 / (1.0 + std::exp(m2 - m1));
  CHECK(p1 == doctest::Approx(std::exp(m1) / (std::exp(m1) + std::exp(m2))).epsilon(1e-12));
}

TEST_CASE("fractional posterior properties") {
  const ConjugateFixture fx(15, 5);
  const LogPosterior base = fx.posterior();
  const LogPosterior half =
      fractional_log_posterior(base.log_lik, base.log_prior, 0.5, 1);
  const LogPosterior full =
      fractional_log_posterior(base.log_lik, base.log_prior, 1.0, 1);
  Eigen::VectorXd a(1), b(1);
  a << 0.3;
  b << 1.1;
  CHECK(full.eval(a) == doctest::Approx(base.eval(a)).epsilon(1e-14));
  const double dhalf = half.eval(a) - half.eval(b);
  const double dbase = (base.log_lik(a) - base.log_lik(b)) * 0.5 +
                       base.log_prior(a) - base.log_prior(b);
  CHECK(dhalf == doctest::Approx(dbase).epsilon(1e-12));

  // flat-prior argmax over a grid does not move with the temperature
  LogPosterior flat_half = fractional_log_posterior(
      base.log_lik, [](const Eigen::VectorXd&) { return 0.0; }, 0.5, 1);
  double best_half = -1e300, arg_half = 0.0, best_full = -1e300, arg_full = 0.0;
  for (double t = -1.0; t <= 2.0; t += 0.01) {
    Eigen::VectorXd th(1);
    th << t;
    if (flat_half.eval(th) > best_half) { best_half = flat_half.eval(th); arg_half = t; }
    if (base.log_lik(th) > best_full) { best_full = base.log_lik(th); arg_full = t; }
  }
  CHECK(arg_half == doctest::Approx(arg_full).epsilon(1e-12));
  CHECK_THROWS_AS(fractional_log_posterior(base.log_lik, base.log_prior, 0.0, 1),
                  InvalidInput);
}

TEST_CASE("dcm posterior: slack radius gives the entropy plateau") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd data(6, 1);
  for (int i = 0; i < 6; ++i) data(i, 0) = g(rng);
  const CenteringModel centering = gaussian_centering(1);
  MetricParams mp;
  mp.lambda_alpha = 2.0;
  OptConfig cfg;
  const LogPosterior post =
      dcm_log_posterior(data, centering, DcmConstraint::epsilon(100.0), mp, cfg);
  Eigen::VectorXd theta(2 + 0);
  theta.resize(2);
  theta << 0.1, std::log(1.2);
  const double expect = centering.log_prior(theta) - 6.0 * std::log(6.0);
  CHECK(post.eval(theta) == doctest::Approx(expect).epsilon(1e-9));
  CHECK_FALSE(post.detail(theta).constraint_active);
}

TEST_CASE("dcm posterior matches the simplex-grid oracle on n = 3") {
  Eigen::MatrixXd data(3, 1);
  data << -1.0, 0.2, 1.5;
  const CenteringModel centering = gaussian_centering(1);
  MetricParams mp;
  mp.lambda_alpha = 2.0;
  OptConfig cfg;

  Eigen::VectorXd theta(2);
  theta << 0.3, 0.5 * std::log(0.25);  // N(0.3, 0.25)
  auto dist = [&](const Eigen::Vector3d& w) {
    std::vector<double> atoms{-1.0, 0.2, 1.5};
    std::vector<double> wv{w[0], w[1], w[2]};
    return oracle::andrew_1d_gauss_oracle(0.3, 0.5, atoms, wv, 2.0);
  };
  const double duni = dist(Eigen::Vector3d::Constant(1.0 / 3.0));
  const double eps = std::sqrt(0.75 * duni);
  const Eigen::Vector3d best =
      oracle::simplex3_constrained_entropy_argmax(dist, eps * eps);
  const double oracle_lik = best.array().log().sum();

  const LogPosterior post =
      dcm_log_posterior(data, centering, DcmConstraint::epsilon(eps), mp, cfg);
  CHECK(std::abs(post.log_lik(theta) - oracle_lik) < 5e-3);
  CHECK(post.detail(theta).constraint_active);
}

TEST_CASE("dcm log-likelihood never exceeds the entropy bound") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd data(8, 1);
  for (int i = 0; i < 8; ++i) data(i, 0) = g(rng);
  MetricParams mp;
  mp.lambda_alpha = 2.0;
  OptConfig cfg;
  const CenteringModel centering = gaussian_centering(1);
  const LogPosterior post =
      dcm_log_posterior(data, centering, DcmConstraint::epsilon(0.8), mp, cfg);
  const double bound = -8.0 * std::log(8.0);
  for (int rep = 0; rep < 10; ++rep) {
    Eigen::VectorXd theta(2);
    theta << g(rng), 0.4 * g(rng);
    const double ll = post.log_lik(theta);
    if (std::isfinite(ll)) CHECK(ll <= bound + 1e-9);
  }
}

TEST_CASE("hpd interval on a sorted ramp") {
  Eigen::VectorXd draws(100);
  for (int i = 0; i < 100; ++i) draws[i] = i;
  const auto [lo, hi] = hpd_interval(draws, 0.9);
  CHECK(hi - lo == doctest::Approx(89.0));
}

TEST_CASE("glm dcm posterior covers the truth on clean data") {
  // Calibration at desk scale: 25 seeded replications of the clean Poisson
  // problem; the 95% HPD for beta0 should cover in at least 90% of them.
  int covered = 0;
  const int reps = 25;
  for (int r = 0; r < reps; ++r) {
    const GlmScoreProblem prob =
        poisson_contaminated_data(60, 5.0, 1.0, 0.0, math::derive_seed(1234, r));
    const Eigen::VectorXd init = glm_theta_init(prob);
    MetricParams mp;
    mp.lambda_alpha = 1e-4;  // costs are on the squared-score scale
    OptConfig cfg;
    // Radius: a fixed fraction of the uniform-weight distance at the MLE.
    AndrewWeightModel model(glm_centering(1).builder(init), prob.score(prob.mle), mp);
    const double eps =
        0.96 * std::sqrt(model.value(uniform_simplex(prob.responses.size())));
    const LogPosterior post =
        glm_dcm_posterior(prob, DcmConstraint::epsilon(eps), mp, cfg);
    const Eigen::MatrixXd cov =
        glm_one_step_proposal(glm_reparam_jacobian(prob, prob.mle), prob.fisher_info, 1.0);
    const Chain chain = mh_sample(post, init, ProposalSpec::joint(cov), 600, 150,
                                  math::derive_seed(99, r));
    const auto [lo, hi] = hpd_interval(chain.draws.col(3), 0.95);
    if (lo <= 5.0 && 5.0 <= hi) ++covered;
  }
  CHECK(covered >= int(0.9 * reps));
}
