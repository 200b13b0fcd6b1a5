#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "dbetel/entropy_solver.hpp"
#include "dbetel/models.hpp"

// Entropy-based allocation: maximum-entropy weights under a transport
// penalty toward a skew-normal target return distribution, and the
// classical mean-variance baseline.

namespace dbetel {

struct ReturnsPanel {
  Eigen::MatrixXd returns;  // periods x assets (excess returns)
  std::vector<std::string> assets;
  std::string period;

  int n_assets() const { return static_cast<int>(returns.cols()); }
  int n_periods() const { return static_cast<int>(returns.rows()); }
  void validate() const;
};

/// argmax_w E(w'R) - (lambda/2) Var(w'R) s.t. sum w = 1, solved through the
/// equality-constrained KKT system; weights may be negative.
Eigen::VectorXd mean_variance_weights(const ReturnsPanel& panel, double lambda_risk);

struct PortfolioResult {
  Eigen::VectorXd weights;
  double normalized_entropy = 0.0;  // -(1/log n) sum w log w, in [0, 1]
  double gap = 0.0;                 // squared transport distance to the target
  std::vector<double> objective_trace;
  bool converged = true;
};

/// min over the simplex of (1-lambda*) W_AR^2[F_{w'R}, target] +
/// lambda* b_n sum w log w with b_n = 1/log n; projected gradient with
/// backtracking. The distance is the 1-D specialization: target variance
/// term plus the quantile distance between the realized-return empirical
/// measure and the skew-normal target.
PortfolioResult max_entropy_portfolio(const ReturnsPanel& panel,
                                      const SkewNormalSpec& target,
                                      double lambda_star,
                                      const OptConfig& cfg = {});

}  // namespace dbetel
