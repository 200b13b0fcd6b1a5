#include "dbetel/inference.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "dbetel/errors.hpp"
#include "dbetel/math.hpp"

namespace dbetel {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

double LogPosterior::eval(const Eigen::VectorXd& theta) const {
  const double lp = log_prior(theta);
  if (!std::isfinite(lp)) return kNegInf;
  const double ll = log_lik(theta);
  if (!std::isfinite(ll)) return kNegInf;
  return lp + ll;
}

PosteriorEval LogPosterior::detail(const Eigen::VectorXd& theta) const {
  if (eval_detail) return eval_detail(theta);
  return {eval(theta), false};
}

Eigen::VectorXd Chain::posterior_mean() const {
  return draws.colwise().mean().transpose();
}

Eigen::VectorXd Chain::map_draw() const {
  Eigen::Index best = 0;
  log_post.maxCoeff(&best);
  return draws.row(best).transpose();
}

ProposalSpec ProposalSpec::coordinatewise(const Eigen::VectorXd& scales) {
  ProposalSpec p;
  p.coord_scales = scales;
  return p;
}

ProposalSpec ProposalSpec::joint(const Eigen::MatrixXd& cov) {
  ProposalSpec p;
  p.covariance = cov;
  return p;
}

namespace {

// PSD factor B with B B' = cov; tolerates singular covariances.
Eigen::MatrixXd psd_factor(const Eigen::MatrixXd& cov) {
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success) throw InvalidInput("proposal covariance invalid");
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal();
}

}  // namespace

Chain mh_sample(const LogPosterior& post, const Eigen::VectorXd& init,
                const ProposalSpec& proposal, int draws, int burn_in,
                uint64_t seed) {
  if (draws < 1) throw InvalidInput("mh_sample: draws must be >= 1");
  if (burn_in < 0) burn_in = draws / 5;
  const int dim = static_cast<int>(init.size());

  PosteriorEval cur = post.detail(init);
  if (!std::isfinite(cur.log_post)) {
    throw InvalidInput("mh_sample: initial point has non-finite posterior");
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  Eigen::MatrixXd factor;
  if (!proposal.is_coordinatewise()) {
    if (proposal.covariance.rows() != dim) {
      throw InvalidInput("mh_sample: proposal covariance dimension mismatch");
    }
    factor = psd_factor(proposal.covariance);
  } else if (proposal.coord_scales.size() != dim) {
    throw InvalidInput("mh_sample: proposal scale dimension mismatch");
  }

  Chain chain;
  chain.seed = seed;
  chain.proposal_cov = proposal.covariance;
  chain.draws.resize(draws, dim);
  chain.log_post.resize(draws);

  Eigen::VectorXd state = init;
  long long proposals = 0, accepts = 0;
  int active_count = 0;

  const int total = burn_in + draws;
  Eigen::VectorXd cand(dim), z(dim);
  for (int t = 0; t < total; ++t) {
    if (proposal.is_coordinatewise()) {
      for (int j = 0; j < dim; ++j) {
        cand = state;
        cand[j] += proposal.coord_scales[j] * gauss(rng);
        const PosteriorEval pe = post.detail(cand);
        ++proposals;
        if (std::log(unif(rng)) < pe.log_post - cur.log_post) {
          state = cand;
          cur = pe;
          ++accepts;
        }
      }
    } else {
      for (int j = 0; j < dim; ++j) z[j] = gauss(rng);
      cand = state + factor * z;
      const PosteriorEval pe = post.detail(cand);
      ++proposals;
      if (std::log(unif(rng)) < pe.log_post - cur.log_post) {
        state = cand;
        cur = pe;
        ++accepts;
      }
    }
    if (t >= burn_in) {
      const int idx = t - burn_in;
      chain.draws.row(idx) = state.transpose();
      chain.log_post[idx] = cur.log_post;
      if (cur.constraint_active) ++active_count;
    }
  }
  if (accepts == 0) {
    throw AllRejected("mh_sample: no proposal accepted over the full run");
  }
  chain.acceptance_rate = static_cast<double>(accepts) / proposals;
  chain.active_fraction = static_cast<double>(active_count) / draws;
  return chain;
}

Eigen::MatrixXd glm_one_step_proposal(const Eigen::MatrixXd& grad_g,
                                      const Eigen::MatrixXd& fisher, double k) {
  if (fisher.rows() != fisher.cols() || grad_g.cols() != fisher.rows()) {
    throw InvalidInput("glm_one_step_proposal: shape mismatch");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(fisher);
  if (llt.info() != Eigen::Success) {
    throw SingularInformation("glm_one_step_proposal: information matrix not PD");
  }
  const Eigen::MatrixXd inv =
      llt.solve(Eigen::MatrixXd::Identity(fisher.rows(), fisher.cols()));
  return k * grad_g * inv * grad_g.transpose();
}

Eigen::VectorXd glm_score_moments(const GlmScoreProblem& problem,
                                  const Eigen::VectorXd& beta) {
  const Eigen::MatrixXd eta = problem.score(beta);
  const Eigen::VectorXd mean = eta.colwise().mean();
  const Eigen::MatrixXd centered = eta.rowwise() - mean.transpose();
  const double n = static_cast<double>(eta.rows());
  const double v1 = centered.col(0).squaredNorm() / n;
  const double v2 = centered.col(1).squaredNorm() / n;
  const double cov = centered.col(0).dot(centered.col(1)) / n;
  Eigen::Vector3d out;
  out << std::log(v1), std::log(v2), cov / std::sqrt(v1 * v2);
  return out;
}

Eigen::MatrixXd glm_reparam_jacobian(const GlmScoreProblem& problem,
                                     const Eigen::VectorXd& beta, double step) {
  Eigen::MatrixXd jac(5, 2);
  for (int j = 0; j < 2; ++j) {
    Eigen::VectorXd bp = beta, bm = beta;
    bp[j] += step;
    bm[j] -= step;
    jac.block(0, j, 3, 1) =
        (glm_score_moments(problem, bp) - glm_score_moments(problem, bm)) / (2.0 * step);
  }
  jac.block(3, 0, 2, 2) = Eigen::MatrixXd::Identity(2, 2);
  return jac;
}

double chib_log_marginal(
    const LogPosterior& post, const Chain& chain, const Eigen::VectorXd* theta_star,
    const std::function<double(const Eigen::VectorXd&)>* posterior_ordinate) {
  const Eigen::VectorXd star = theta_star ? *theta_star : chain.map_draw();
  double log_ordinate;
  if (posterior_ordinate) {
    log_ordinate = std::log((*posterior_ordinate)(star));
  } else {
    const Eigen::Index t = chain.draws.rows();
    const Eigen::Index d = chain.draws.cols();
    Eigen::VectorXd sd(d);
    for (Eigen::Index j = 0; j < d; ++j) {
      sd[j] = std::sqrt(math::sample_variance(chain.draws.col(j)));
      if (sd[j] < 1e-12) {
        throw DegenerateKde("chib: chain variance is numerically zero in a coordinate");
      }
    }
    // Silverman product-kernel bandwidths.
    const double factor =
        std::pow(4.0 / ((d + 2.0) * static_cast<double>(t)), 1.0 / (d + 4.0));
    const Eigen::VectorXd h = factor * sd;
    Eigen::ArrayXd logk(t);
    const double lognorm = -0.5 * d * std::log(2.0 * math::kPi) - h.array().log().sum();
    for (Eigen::Index i = 0; i < t; ++i) {
      const Eigen::ArrayXd u =
          (chain.draws.row(i).transpose() - star).array() / h.array();
      logk[i] = lognorm - 0.5 * u.square().sum();
    }
    const double m = logk.maxCoeff();
    log_ordinate = m + std::log((logk - m).exp().sum()) - std::log(static_cast<double>(t));
  }
  return post.log_lik(star) + post.log_prior(star) - log_ordinate;
}

LogPosterior fractional_log_posterior(
    const std::function<double(const Eigen::VectorXd&)>& log_lik,
    const std::function<double(const Eigen::VectorXd&)>& log_prior,
    double temperature, int dim) {
  if (temperature <= 0.0 || temperature > 1.0) {
    throw InvalidInput("fractional posterior: temperature must lie in (0, 1]");
  }
  LogPosterior post;
  post.kind = LogPosterior::Kind::Fractional;
  post.dim = dim;
  post.log_prior = log_prior;
  post.log_lik = [log_lik, temperature](const Eigen::VectorXd& theta) {
    return temperature * log_lik(theta);
  };
  return post;
}

LogPosterior parametric_log_posterior(const Eigen::MatrixXd& data,
                                      const CenteringModel& centering) {
  LogPosterior post;
  post.kind = LogPosterior::Kind::Parametric;
  post.dim = centering.theta_dim;
  post.log_prior = centering.log_prior;
  post.log_lik = [data, builder = centering.builder,
                  support = centering.support_check](const Eigen::VectorXd& theta) {
    if (!support(theta)) return kNegInf;
    const EllipticalMixture mix = builder(theta);
    double acc = 0.0;
    for (Eigen::Index i = 0; i < data.rows(); ++i) {
      acc += mix.log_pdf(data.row(i).transpose());
    }
    return acc;
  };
  return post;
}

LogPosterior mcm_log_posterior(
    const std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>& moments_fn,
    const std::function<double(const Eigen::VectorXd&)>& log_prior, int dim,
    const OptConfig& cfg) {
  LogPosterior post;
  post.kind = LogPosterior::Kind::Mcm;
  post.dim = dim;
  post.log_prior = log_prior;
  post.log_lik = [moments_fn, cfg](const Eigen::VectorXd& theta) {
    const EtelSolution sol = solve_etel_mcm(moments_fn(theta), cfg);
    return sol.hull_ok ? sol.log_likelihood : kNegInf;
  };
  return post;
}

namespace {

struct DcmWarmState {
  Eigen::VectorXd weights;
  double multiplier = 0.0;
  bool valid = false;
};

LogPosterior make_dcm_posterior(
    std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> atoms_fn,
    const CenteringModel& centering, const DcmConstraint& constraint,
    const MetricParams& mp, const OptConfig& cfg, bool warm_start) {
  LogPosterior post;
  post.kind = LogPosterior::Kind::Dcm;
  post.dim = centering.theta_dim;
  post.log_prior = centering.log_prior;

  auto state = std::make_shared<DcmWarmState>();
  auto solve = [atoms_fn = std::move(atoms_fn), builder = centering.builder,
                support = centering.support_check, constraint, mp, cfg,
                warm_start, state](const Eigen::VectorXd& theta) -> DcmSolution {
    DcmSolution bad;
    bad.log_likelihood = kNegInf;
    bad.status = SolveStatus::Infeasible;
    if (!support(theta)) return bad;
    EllipticalMixture mix = builder(theta);
    const Eigen::MatrixXd atoms = atoms_fn(theta);
    AndrewWeightModel model(mix, atoms, mp);
    const Eigen::VectorXd* w0 =
        (warm_start && state->valid && state->weights.size() == atoms.rows())
            ? &state->weights : nullptr;
    DcmSolution sol;
    if (constraint.kind == DcmConstraint::Kind::Lambda) {
      sol = solve_dcm_dual(model, constraint.value, cfg, w0);
    } else {
      sol = solve_dcm_primal(model, constraint.value, cfg, w0);
    }
    if (warm_start && sol.status != SolveStatus::Infeasible) {
      state->weights = sol.weights;
      state->multiplier = sol.dual_multiplier;
      state->valid = true;
    }
    return sol;
  };

  post.log_lik = [solve](const Eigen::VectorXd& theta) {
    const DcmSolution sol = solve(theta);
    return sol.status == SolveStatus::Infeasible ? kNegInf : sol.log_likelihood;
  };
  post.eval_detail = [solve, log_prior = post.log_prior](
                         const Eigen::VectorXd& theta) -> PosteriorEval {
    const double lp = log_prior(theta);
    if (!std::isfinite(lp)) return {kNegInf, false};
    const DcmSolution sol = solve(theta);
    if (sol.status == SolveStatus::Infeasible) return {kNegInf, false};
    return {lp + sol.log_likelihood, sol.constraint_active};
  };
  return post;
}

}  // namespace

LogPosterior dcm_log_posterior(const Eigen::MatrixXd& data,
                               const CenteringModel& centering,
                               const DcmConstraint& constraint,
                               const MetricParams& mp, const OptConfig& cfg,
                               bool warm_start) {
  return make_dcm_posterior([data](const Eigen::VectorXd&) { return data; },
                            centering, constraint, mp, cfg, warm_start);
}

LogPosterior dcm_log_posterior_dynamic(
    const std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>& atoms_fn,
    const CenteringModel& centering, const DcmConstraint& constraint,
    const MetricParams& mp, const OptConfig& cfg, bool warm_start) {
  return make_dcm_posterior(atoms_fn, centering, constraint, mp, cfg, warm_start);
}

Eigen::VectorXd glm_theta_init(const GlmScoreProblem& problem) {
  Eigen::VectorXd theta(5);
  theta.head(3) = glm_score_moments(problem, problem.mle);
  theta.tail(2) = problem.mle;
  return theta;
}

LogPosterior glm_dcm_posterior(const GlmScoreProblem& problem,
                               const DcmConstraint& constraint,
                               const MetricParams& mp, const OptConfig& cfg,
                               bool warm_start) {
  return dcm_log_posterior_dynamic(
      [problem](const Eigen::VectorXd& theta) {
        return problem.score(theta.tail(2));
      },
      glm_centering(1), constraint, mp, cfg, warm_start);
}

std::pair<double, double> hpd_interval(const Eigen::VectorXd& draws, double mass) {
  if (draws.size() < 2) throw InvalidInput("hpd_interval: need at least two draws");
  std::vector<double> v(draws.data(), draws.data() + draws.size());
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  const auto m = std::min(n, static_cast<std::size_t>(std::ceil(mass * n)));
  double best_lo = v.front(), best_hi = v.back();
  for (std::size_t i = 0; i + m <= n; ++i) {
    if (v[i + m - 1] - v[i] < best_hi - best_lo) {
      best_lo = v[i];
      best_hi = v[i + m - 1];
    }
  }
  return {best_lo, best_hi};
}

}  // namespace dbetel
