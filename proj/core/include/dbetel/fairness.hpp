#pragma once

#include <Eigen/Core>
#include <vector>

#include "dbetel/entropy_solver.hpp"
#include "dbetel/transport.hpp"

// Demographic parity in the transport metric: unconstrained per-group fits,
// the two-step reweighting post-process, and the joint in-model fit. Both
// fitted-value distributions are treated as zero-scale degenerate mixtures,
// so the gap is the Sinkhorn atom-cost term plus the 1-D quantile term.

namespace dbetel {

struct FairnessProblem {
  Eigen::MatrixXd features;   // n x d, include an intercept column if wanted
  Eigen::VectorXd response;
  std::vector<int> group;     // 0 = S, 1 = T
  double lambda_star = 0.5;   // trade-off in [0, 1]
  MetricParams metric{50.0, 8192, 1e-9, 20000};
};

struct FairFit {
  Eigen::VectorXd theta_s, theta_t;
  double sigma_sq = 0.0;
  Eigen::VectorXd weights_t;     // simplex over group-T rows
  double w_ar_gap = 0.0;
  AndrewBreakdown gap_terms;
  std::vector<double> objective_trace;
  bool converged = true;
};

FairFit fit_unconstrained(const FairnessProblem& problem);

/// Step 1 = unconstrained estimates; step 2 = reweighting of group T by the
/// entropy-solver dual path: min (1-lambda*) gap^2 + lambda* sum w log w.
FairFit fit_two_step(const FairnessProblem& problem, const OptConfig& cfg = {});

/// Joint block-coordinate ascent over (theta_S, theta_T, sigma^2, w) on the
/// penalized weighted likelihood, damped so the objective never decreases;
/// initialized at the two-step solution.
FairFit fit_in_model(const FairnessProblem& problem, const OptConfig& cfg = {});

struct CdfReport {
  Eigen::VectorXd z_s, cdf_s;  // step-function breakpoints, right-continuous
  Eigen::VectorXd z_t, cdf_t;
  AndrewBreakdown gap_terms;
};

CdfReport group_cdf_report(const FairFit& fit, const FairnessProblem& problem);

/// Weighted Nadaraya-Watson prediction at a new covariate row (Gaussian
/// product kernel, Silverman bandwidths over group-T features).
double fair_predict(const FairFit& fit, const FairnessProblem& problem,
                    const Eigen::VectorXd& x);

/// The in-model objective (larger is better); exposed for diagnostics.
double in_model_objective(const FairnessProblem& problem, const Eigen::VectorXd& theta_s,
                          const Eigen::VectorXd& theta_t, double sigma_sq,
                          const Eigen::VectorXd& weights_t);

}  // namespace dbetel
