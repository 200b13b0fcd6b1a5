#include "dbetel/portfolio.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "dbetel/errors.hpp"
#include "dbetel/math.hpp"

namespace dbetel {

void ReturnsPanel::validate() const {
  if (returns.rows() < 2 || returns.cols() < 2) {
    throw InvalidInput("returns panel: need at least 2 periods and 2 assets");
  }
  if (!returns.allFinite()) throw InvalidInput("returns panel: non-finite entry");
  if (!assets.empty() && static_cast<int>(assets.size()) != n_assets()) {
    throw InvalidInput("returns panel: label/column mismatch");
  }
}

Eigen::VectorXd mean_variance_weights(const ReturnsPanel& panel, double lambda_risk) {
  panel.validate();
  if (lambda_risk <= 0.0) throw InvalidInput("mean_variance: lambda must be > 0");
  const int n = panel.n_assets();
  const Eigen::VectorXd mu = panel.returns.colwise().mean();
  const Eigen::MatrixXd centered = panel.returns.rowwise() - mu.transpose();
  const Eigen::MatrixXd cov =
      centered.transpose() * centered / static_cast<double>(panel.n_periods() - 1);

  Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + 1, n + 1);
  kkt.topLeftCorner(n, n) = lambda_risk * cov;
  kkt.topRightCorner(n, 1).setOnes();
  kkt.bottomLeftCorner(1, n).setOnes();
  Eigen::VectorXd rhs(n + 1);
  rhs.head(n) = mu;
  rhs[n] = 1.0;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
  if (!lu.isInvertible()) {
    throw SingularCovariance("mean_variance: sample covariance is singular");
  }
  return lu.solve(rhs).head(n);
}

namespace {

// Euclidean projection onto the probability simplex (sort-based).
Eigen::VectorXd project_simplex(const Eigen::VectorXd& v) {
  const Eigen::Index n = v.size();
  std::vector<double> u(v.data(), v.data() + n);
  std::sort(u.begin(), u.end(), std::greater<double>());
  double cssv = 0.0, theta = 0.0;
  int rho = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    cssv += u[i];
    const double t = (cssv - 1.0) / static_cast<double>(i + 1);
    if (u[i] - t > 0.0) {
      rho = static_cast<int>(i) + 1;
      theta = t;
    }
  }
  return (v.array() - theta).max(0.0);
}

struct TargetTables {
  detail::PwlQuantileTable table;
  double variance;
};

TargetTables build_target(const SkewNormalSpec& target) {
  if (target.location.size() != 1) {
    throw InvalidInput("max_entropy_portfolio: target must be a scalar spec");
  }
  const double zeta = target.location[0];
  const double omega = target.scale(0, 0);
  const double alpha = target.slant[0];
  TargetTables t{detail::PwlQuantileTable::from_quantile_fn([&](double z) {
                   return math::skew_normal_quantile(z, zeta, omega, alpha);
                 }),
                 skew_normal_moments(target).variance};
  return t;
}

// Quantile distance between the uniform empirical measure on the realized
// returns and the target, plus the gradient with respect to the returns.
double quantile_gap(const TargetTables& target, const Eigen::VectorXd& realized,
                    Eigen::VectorXd* grad_returns) {
  const Eigen::Index tp = realized.size();
  std::vector<int> idx(tp);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](int a, int b) { return realized[a] < realized[b]; });
  double acc = 0.0;
  if (grad_returns) grad_returns->setZero(tp);
  double zlo = 0.0, g1lo = 0.0, g2lo = 0.0;
  for (Eigen::Index k = 0; k < tp; ++k) {
    const double zhi = (k + 1 == tp) ? 1.0 : static_cast<double>(k + 1) / tp;
    const double g1hi = target.table.g1(zhi);
    const double g2hi = target.table.g2(zhi);
    const double r = realized[idx[static_cast<std::size_t>(k)]];
    acc += (g2hi - g2lo) - 2.0 * r * (g1hi - g1lo) + r * r * (zhi - zlo);
    if (grad_returns) {
      (*grad_returns)[idx[static_cast<std::size_t>(k)]] =
          2.0 * (r * (zhi - zlo) - (g1hi - g1lo));
    }
    zlo = zhi;
    g1lo = g1hi;
    g2lo = g2hi;
  }
  return acc;
}

}  // namespace

PortfolioResult max_entropy_portfolio(const ReturnsPanel& panel,
                                      const SkewNormalSpec& target,
                                      double lambda_star, const OptConfig& cfg) {
  panel.validate();
  if (lambda_star < 0.0 || lambda_star > 1.0) {
    throw InvalidInput("max_entropy_portfolio: lambda_star must lie in [0, 1]");
  }
  const int n = panel.n_assets();
  const double bn = 1.0 / std::log(static_cast<double>(n));

  PortfolioResult out;
  if (lambda_star == 1.0) {
    // Pure entropy: uniform weights exactly.
    out.weights = uniform_simplex(n);
    const TargetTables tt = build_target(target);
    out.gap = tt.variance + quantile_gap(tt, panel.returns * out.weights, nullptr);
    out.normalized_entropy = 1.0;
    out.converged = true;
    return out;
  }

  const TargetTables tt = build_target(target);
  auto objective = [&](const Eigen::VectorXd& w, Eigen::VectorXd* grad) {
    const Eigen::VectorXd realized = panel.returns * w;
    Eigen::VectorXd gr;
    const double gap =
        tt.variance + quantile_gap(tt, realized, grad ? &gr : nullptr);
    const double ent = (w.array() * w.array().log()).sum();
    if (grad) {
      *grad = (1.0 - lambda_star) * (panel.returns.transpose() * gr) +
              lambda_star * bn * (1.0 + w.array().log()).matrix();
    }
    return (1.0 - lambda_star) * gap + lambda_star * bn * ent;
  };

  Eigen::VectorXd w = uniform_simplex(n);
  Eigen::VectorXd grad(n), gnext(n);
  double fval = objective(w, &grad);
  out.objective_trace.push_back(fval);
  double step = 1.0 / std::max(1.0, grad.cwiseAbs().maxCoeff());
  bool converged = false;
  for (int it = 0; it < cfg.max_inner; ++it) {
    bool accepted = false;
    for (int bt = 0; bt < 60 && step >= 1e-18; ++bt) {
      Eigen::VectorXd wn = project_simplex(w - step * grad);
      wn = wn.cwiseMax(cfg.weight_floor);
      wn /= wn.sum();
      const double fnext = objective(wn, &gnext);
      if (fnext <= fval + 1e-4 * grad.dot(wn - w)) {
        const double move = (wn - w).cwiseAbs().maxCoeff();
        w = wn;
        grad = gnext;
        fval = fnext;
        accepted = true;
        step *= 1.5;
        out.objective_trace.push_back(fval);
        if (move < 1e-12) converged = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      converged = true;  // no simplex-feasible descent direction left
      break;
    }
    if (converged) break;
  }

  out.weights = w;
  out.gap = tt.variance + quantile_gap(tt, panel.returns * w, nullptr);
  out.normalized_entropy = -bn * (w.array() * w.array().log()).sum();
  out.converged = converged;
  return out;
}

}  // namespace dbetel
