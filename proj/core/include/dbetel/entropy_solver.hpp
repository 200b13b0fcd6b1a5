#pragma once

#include <Eigen/Core>
#include <functional>
#include <vector>

#include "dbetel/transport.hpp"

// Constrained entropy maximization over the probability simplex: the
// distributionally constrained weight problem in primal (epsilon ball) and
// dual (multiplier) form, and the moment-condition ETEL baseline.

namespace dbetel {

struct OptConfig {
  double kkt_tol = 1e-7;
  double inner_tol = 1e-9;
  int max_inner = 5000;
  int max_outer = 30;
  double weight_floor = 1e-12;
  double penalty_init = 1.0;
  double penalty_growth = 10.0;
  double constraint_tol = 1e-9;   // on (D^2 - eps^2)/eps^2
  double eta_bound = 200.0;       // ETEL hull-failure threshold on |eta|
};

enum class SolveStatus { Converged, MaxIterations, Infeasible };

struct IterRecord {
  double objective;
  double violation;
};

struct DcmSolution {
  Eigen::VectorXd weights;
  double log_likelihood = 0.0;   // sum_i log w_i
  double distance_sq = 0.0;      // D^2[F_theta, nu_{w,x}] at the solution
  double dual_multiplier = 0.0;  // lambda* >= 0
  bool constraint_active = false;
  SolveStatus status = SolveStatus::Converged;
  std::vector<IterRecord> trace;
};

struct EtelSolution {
  Eigen::VectorXd weights;
  Eigen::VectorXd eta;
  double log_likelihood = 0.0;  // -inf sentinel when the hull condition fails
  bool hull_ok = false;
};

Eigen::VectorXd uniform_simplex(Eigen::Index n);

/// Minimize ent_coef * sum w log w + dist_coef * D2(w) over the simplex by
/// mirror descent in softmax coordinates with backtracking. The building
/// block behind both DCM forms and the fairness reweighting.
DcmSolution minimize_entropy_distance(const WeightDistanceModel& model,
                                      double ent_coef, double dist_coef,
                                      const OptConfig& cfg,
                                      const Eigen::VectorXd* w0 = nullptr);

/// max sum -w log w subject to D^2[F_theta, nu_{w,x}] <= eps^2: augmented
/// Lagrangian outer loop (multiplier update, penalty x growth) over the
/// mirror-descent inner solver. Infeasible instances are returned with the
/// Infeasible status, never thrown.
DcmSolution solve_dcm_primal(const WeightDistanceModel& model, double epsilon,
                             const OptConfig& cfg,
                             const Eigen::VectorXd* warm = nullptr);
DcmSolution solve_dcm_primal(const Eigen::MatrixXd& x,
                             const EllipticalMixture& f_theta, double epsilon,
                             const MetricParams& mp, const OptConfig& cfg,
                             const Eigen::VectorXd* warm = nullptr);

/// min sum w log w + lambda* D^2 over the simplex; reports the induced
/// epsilon through distance_sq.
DcmSolution solve_dcm_dual(const WeightDistanceModel& model, double lambda_star,
                           const OptConfig& cfg,
                           const Eigen::VectorXd* warm = nullptr);
DcmSolution solve_dcm_dual(const Eigen::MatrixXd& x,
                           const EllipticalMixture& f_theta, double lambda_star,
                           const MetricParams& mp, const OptConfig& cfg,
                           const Eigen::VectorXd* warm = nullptr);

/// Exponentially tilted empirical likelihood for a moment condition model:
/// Newton (with line search) on the log-sum-exp dual, softmax weights. The
/// rows of g_values are g(x_i, theta).
EtelSolution solve_etel_mcm(const Eigen::MatrixXd& g_values, const OptConfig& cfg);

EtelSolution solve_etel_mcm(
    const Eigen::MatrixXd& x,
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&,
                                        const Eigen::VectorXd&)>& g,
    const Eigen::VectorXd& theta, const OptConfig& cfg);

}  // namespace dbetel
