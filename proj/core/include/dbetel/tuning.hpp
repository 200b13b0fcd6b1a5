#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "dbetel/inference.hpp"

// Data-driven selection of the constraint radius: leave-one-out expected
// log predictive density, its standard error, the descending-grid protocol
// and exp(-ELPD) model averaging.

namespace dbetel {

struct SamplerConfig {
  int draws = 2000;
  int burn_in = -1;  // defaults to draws / 5
  Eigen::VectorXd init;
  Eigen::VectorXd coord_scales;
  uint64_t seed = 1;
};

struct LooConfig {
  int budget_divisor = 4;  // fold chains run draws / budget_divisor
  int workers = 1;
};

struct ElpdRecord {
  double epsilon = 0.0;
  double elpd = 0.0;
  double se = 0.0;
  Eigen::VectorXd pointwise;
  Eigen::VectorXd theta_hat;      // posterior mean of the full-data chain
  double active_fraction = 0.0;   // share of draws with a binding constraint
  bool valid = false;
};

/// Refit the constrained posterior on each leave-one-out fold at a reduced
/// budget and average the centering density of the held-out point over the
/// fold chain. pointwise[i] = log E_chain[ f_theta(x_i) ].
ElpdRecord elpd_loo(const Eigen::MatrixXd& data, const CenteringModel& centering,
                    double epsilon, const MetricParams& mp, const OptConfig& cfg,
                    const SamplerConfig& sampler, const LooConfig& loo);

struct TuneResult {
  Eigen::VectorXd theta_ma;
  std::vector<ElpdRecord> records;  // descending epsilon, refinement included
  int h0_index = -1;                // largest epsilon with an active constraint
  Eigen::VectorXd kappa;            // zero outside the active range
};

/// Descending-grid protocol: per-epsilon LOO records, activity detection
/// (majority of full-data draws), exp(ma_sign * ELPD) weights over the
/// active range, optional log-scale refinement of the steepest interval.
/// ma_sign = -1 reproduces the printed averaging formula.
TuneResult tune_epsilon(const Eigen::MatrixXd& data, const CenteringModel& centering,
                        std::vector<double> epsilon_grid, const MetricParams& mp,
                        const OptConfig& cfg, const SamplerConfig& sampler,
                        const LooConfig& loo, double ma_sign = -1.0,
                        bool refine = false);

}  // namespace dbetel
