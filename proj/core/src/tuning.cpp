#include "dbetel/tuning.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <limits>
#include <map>
#include <string>

#include "dbetel/errors.hpp"
#include "dbetel/math.hpp"
#include "dbetel/parallel.hpp"

namespace dbetel {

namespace {

Eigen::MatrixXd drop_row(const Eigen::MatrixXd& data, Eigen::Index i) {
  Eigen::MatrixXd out(data.rows() - 1, data.cols());
  out.topRows(i) = data.topRows(i);
  out.bottomRows(data.rows() - 1 - i) = data.bottomRows(data.rows() - 1 - i);
  return out;
}

}  // namespace

ElpdRecord elpd_loo(const Eigen::MatrixXd& data, const CenteringModel& centering,
                    double epsilon, const MetricParams& mp, const OptConfig& cfg,
                    const SamplerConfig& sampler, const LooConfig& loo) {
  const Eigen::Index n = data.rows();
  if (n < 3) throw InvalidInput("elpd_loo: need at least 3 observations");
  if (sampler.init.size() != centering.theta_dim ||
      sampler.coord_scales.size() != centering.theta_dim) {
    throw InvalidInput("elpd_loo: sampler init/scales must match theta_dim");
  }

  ElpdRecord rec;
  rec.epsilon = epsilon;
  rec.pointwise.resize(n);

  // Full-data chain: parameter estimate and constraint-activity majority.
  {
    const LogPosterior post = dcm_log_posterior(
        data, centering, DcmConstraint::epsilon(epsilon), mp, cfg);
    const Chain chain =
        mh_sample(post, sampler.init, ProposalSpec::coordinatewise(sampler.coord_scales),
                  sampler.draws, sampler.burn_in, sampler.seed);
    rec.theta_hat = chain.posterior_mean();
    rec.active_fraction = chain.active_fraction;
  }

  const int fold_draws = std::max(50, sampler.draws / std::max(1, loo.budget_divisor));
  std::atomic<bool> any_failed{false};
  parallel_for(static_cast<int>(n), loo.workers, [&](int i) {
    try {
      const Eigen::MatrixXd rest = drop_row(data, i);
      const LogPosterior post = dcm_log_posterior(
          rest, centering, DcmConstraint::epsilon(epsilon), mp, cfg);
      // Fold seeds hash the held-out row, so permuting the data permutes
      // the pointwise vector with it.
      const std::string row_bytes(
          reinterpret_cast<const char*>(data.row(i).eval().data()),
          sizeof(double) * static_cast<std::size_t>(data.cols()));
      const Chain chain = mh_sample(
          post, sampler.init, ProposalSpec::coordinatewise(sampler.coord_scales),
          fold_draws, -1,
          math::derive_seed(sampler.seed, 0xf01d, math::fnv1a64(row_bytes)));
      // log of the chain average of f_theta(x_i), evaluated stably.
      Eigen::ArrayXd logf(chain.draws.rows());
      for (Eigen::Index t = 0; t < chain.draws.rows(); ++t) {
        const EllipticalMixture mix = centering.builder(chain.draws.row(t).transpose());
        logf[t] = mix.log_pdf(data.row(i).transpose());
      }
      const double m = logf.maxCoeff();
      rec.pointwise[i] =
          m + std::log((logf - m).exp().sum()) - std::log(double(chain.draws.rows()));
    } catch (const std::exception&) {
      any_failed = true;
      rec.pointwise[i] = std::numeric_limits<double>::quiet_NaN();
    }
  });

  rec.valid = !any_failed;
  if (rec.valid) {
    rec.elpd = rec.pointwise.sum();
    rec.se = std::sqrt(double(n)) * std::sqrt(math::sample_variance(rec.pointwise));
  }
  return rec;
}

TuneResult tune_epsilon(const Eigen::MatrixXd& data, const CenteringModel& centering,
                        std::vector<double> epsilon_grid, const MetricParams& mp,
                        const OptConfig& cfg, const SamplerConfig& sampler,
                        const LooConfig& loo, double ma_sign, bool refine) {
  if (epsilon_grid.size() < 2) throw InvalidInput("tune_epsilon: grid needs >= 2 points");
  for (std::size_t i = 1; i < epsilon_grid.size(); ++i) {
    if (epsilon_grid[i] >= epsilon_grid[i - 1]) {
      throw InvalidInput("tune_epsilon: grid must be strictly decreasing");
    }
  }

  std::map<double, ElpdRecord> cache;
  // Chains at each radius start from an anchor annealed down the grid:
  // when a radius is too tight for the current anchor, short bridging
  // chains at intermediate radii walk it into the smaller feasible region
  // (the MAP draw of each bridge is the next anchor).
  Eigen::VectorXd anchor = sampler.init;
  double anchor_eps = std::numeric_limits<double>::infinity();
  auto feasible_at = [&](const Eigen::VectorXd& theta, double eps) {
    const LogPosterior probe =
        dcm_log_posterior(data, centering, DcmConstraint::epsilon(eps), mp, cfg, false);
    return std::isfinite(probe.eval(theta));
  };
  auto bridge_to = [&](double eps) -> bool {
    if (feasible_at(anchor, eps)) return true;
    double cur = std::isfinite(anchor_eps) ? anchor_eps : 4.0 * epsilon_grid.front();
    for (int round = 0; round < 12; ++round) {
      double mid = std::sqrt(cur * eps);
      int lift = 0;
      while (!feasible_at(anchor, mid) && lift++ < 6) mid = std::sqrt(cur * mid);
      if (lift > 6) return false;
      const LogPosterior post = dcm_log_posterior(
          data, centering, DcmConstraint::epsilon(mid), mp, cfg);
      try {
        const Chain bridge = mh_sample(
            post, anchor, ProposalSpec::coordinatewise(sampler.coord_scales),
            std::max(60, sampler.draws / 4), -1,
            math::derive_seed(sampler.seed, 0xb71d, round));
        anchor = bridge.map_draw();
        anchor_eps = cur = mid;
      } catch (const std::exception&) {
        return false;
      }
      if (feasible_at(anchor, eps)) return true;
    }
    return false;
  };
  auto run_grid = [&](const std::vector<double>& grid) {
    std::vector<ElpdRecord> records(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
      auto it = cache.find(grid[i]);
      if (it == cache.end()) {
        ElpdRecord rec;
        rec.epsilon = grid[i];
        if (bridge_to(grid[i])) {
          SamplerConfig s = sampler;
          s.init = anchor;
          uint64_t bits;
          std::memcpy(&bits, &grid[i], sizeof(bits));
          s.seed = math::derive_seed(sampler.seed, 0x6e1d, bits);
          try {
            rec = elpd_loo(data, centering, grid[i], mp, cfg, s, loo);
          } catch (const std::exception&) {
            rec.valid = false;
          }
        }
        it = cache.emplace(grid[i], std::move(rec)).first;
      }
      records[i] = it->second;
      if (records[i].valid && records[i].active_fraction > 0.5 &&
          feasible_at(records[i].theta_hat, grid[i])) {
        anchor = records[i].theta_hat;
        anchor_eps = grid[i];
      }
    }
    return records;
  };

  std::vector<ElpdRecord> records = run_grid(epsilon_grid);

  if (refine) {
    // One refinement pass: 3 log-scale midpoints in the steepest interval.
    std::size_t steep = 0;
    double dmax = -1.0;
    for (std::size_t i = 0; i + 1 < records.size(); ++i) {
      const double d = std::abs(records[i + 1].elpd - records[i].elpd);
      if (d > dmax) {
        dmax = d;
        steep = i;
      }
    }
    const double lo = std::log(epsilon_grid[steep + 1]);
    const double hi = std::log(epsilon_grid[steep]);
    std::vector<double> inserts;
    for (int k = 1; k <= 3; ++k) inserts.push_back(std::exp(lo + (hi - lo) * k / 4.0));
    for (double eps : inserts) epsilon_grid.push_back(eps);
    std::sort(epsilon_grid.begin(), epsilon_grid.end(), std::greater<double>());
    records = run_grid(epsilon_grid);
  }

  TuneResult out;
  out.records = records;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].valid && records[i].active_fraction > 0.5) {
      out.h0_index = static_cast<int>(i);
      break;
    }
  }
  if (out.h0_index < 0) {
    throw NoActiveEpsilon("tune_epsilon: constraint never binds on the grid");
  }

  const std::size_t m = records.size();
  out.kappa = Eigen::VectorXd::Zero(m);
  double emax = -std::numeric_limits<double>::infinity();
  for (std::size_t i = out.h0_index; i < m; ++i) {
    if (records[i].valid) emax = std::max(emax, ma_sign * records[i].elpd);
  }
  double z = 0.0;
  for (std::size_t i = out.h0_index; i < m; ++i) {
    if (!records[i].valid) continue;
    out.kappa[i] = std::exp(ma_sign * records[i].elpd - emax);
    z += out.kappa[i];
  }
  out.kappa /= z;
  out.theta_ma = Eigen::VectorXd::Zero(centering.theta_dim);
  for (std::size_t i = out.h0_index; i < m; ++i) {
    out.theta_ma += out.kappa[i] * records[i].theta_hat;
  }
  return out;
}

}  // namespace dbetel
