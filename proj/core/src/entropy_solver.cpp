#include "dbetel/entropy_solver.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <limits>

#include "dbetel/errors.hpp"

namespace dbetel {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double weight_entropy_neg(const Eigen::VectorXd& w) {
  return (w.array() * w.array().log()).sum();
}

Eigen::VectorXd floor_normalize(Eigen::VectorXd w, double floor) {
  w = w.cwiseMax(floor);
  return w / w.sum();
}

bool near_uniform(const Eigen::VectorXd& w, double tol = 1e-6) {
  const double u = 1.0 / static_cast<double>(w.size());
  return (w.array() - u).abs().maxCoeff() <= tol;
}

// Mirror descent with Armijo backtracking on a generic smooth objective
// over the simplex. Returns the final weights; reports convergence through
// the out parameters.
struct InnerResult {
  Eigen::VectorXd w;
  double objective;
  bool converged;
  int iterations;
};

InnerResult mirror_descent(
    const std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>& fg,
    Eigen::VectorXd w0, const OptConfig& cfg) {
  const Eigen::Index n = w0.size();
  Eigen::VectorXd w = floor_normalize(std::move(w0), cfg.weight_floor);
  Eigen::VectorXd grad(n), gnext(n);
  double fval = fg(w, grad);
  double step = 1.0 / std::max(1.0, grad.cwiseAbs().maxCoeff());
  InnerResult out{w, fval, false, 0};
  int stalls = 0;
  for (int it = 1; it <= cfg.max_inner; ++it) {
    out.iterations = it;
    const double gbar = w.dot(grad);
    const double kkt = (w.array() * (grad.array() - gbar).abs()).maxCoeff();
    if (kkt <= cfg.kkt_tol * std::max(1.0, std::abs(gbar))) {
      out.converged = true;
      break;
    }
    bool accepted = false;
    for (int bt = 0; bt < 60 && step >= 1e-18; ++bt) {
      Eigen::ArrayXd logw = w.array().log() - step * grad.array();
      logw -= logw.maxCoeff();
      Eigen::VectorXd wn = floor_normalize(logw.exp().matrix(), cfg.weight_floor);
      const double fnext = fg(wn, gnext);
      const double lin = grad.dot(wn - w);
      if (fnext <= fval + 1e-4 * lin) {
        stalls = (fval - fnext <= cfg.inner_tol * std::max(1.0, std::abs(fval)))
                     ? stalls + 1 : 0;
        w = wn;
        grad = gnext;
        fval = fnext;
        accepted = true;
        step *= 1.5;
        break;
      }
      step *= 0.5;
    }
    if (!accepted || stalls >= 4) break;  // step or progress collapsed
  }
  out.w = w;
  out.objective = fval;
  return out;
}

}  // namespace

Eigen::VectorXd uniform_simplex(Eigen::Index n) {
  return Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
}

DcmSolution minimize_entropy_distance(const WeightDistanceModel& model,
                                      double ent_coef, double dist_coef,
                                      const OptConfig& cfg,
                                      const Eigen::VectorXd* w0) {
  const Eigen::Index n = model.size();
  Eigen::VectorXd start = w0 ? *w0 : uniform_simplex(n);

  DcmSolution sol;
  if (dist_coef == 0.0) {
    sol.weights = uniform_simplex(n);
    sol.distance_sq = model.value(sol.weights);
    sol.log_likelihood = sol.weights.array().log().sum();
    sol.status = SolveStatus::Converged;
    sol.constraint_active = false;
    return sol;
  }

  auto fg = [&](const Eigen::VectorXd& w, Eigen::VectorXd& grad) {
    Eigen::VectorXd gd;
    const double dval = model.value_grad(w, gd);
    grad = dist_coef * gd;
    if (ent_coef != 0.0) {
      grad.array() += ent_coef * (1.0 + w.array().log());
      return ent_coef * weight_entropy_neg(w) + dist_coef * dval;
    }
    return dist_coef * dval;
  };
  InnerResult res = mirror_descent(fg, start, cfg);
  sol.weights = res.w;
  sol.distance_sq = model.value(res.w);
  sol.log_likelihood = res.w.array().log().sum();
  sol.status = res.converged ? SolveStatus::Converged : SolveStatus::MaxIterations;
  sol.constraint_active = !near_uniform(res.w);
  sol.trace.push_back({res.objective, 0.0});
  return sol;
}

DcmSolution solve_dcm_dual(const WeightDistanceModel& model, double lambda_star,
                           const OptConfig& cfg, const Eigen::VectorXd* warm) {
  if (lambda_star < 0.0) throw InvalidInput("solve_dcm_dual: lambda_star < 0");
  DcmSolution sol = minimize_entropy_distance(model, 1.0, lambda_star, cfg, warm);
  sol.dual_multiplier = lambda_star;
  if (lambda_star == 0.0) sol.constraint_active = false;
  return sol;
}

DcmSolution solve_dcm_primal(const WeightDistanceModel& model, double epsilon,
                             const OptConfig& cfg, const Eigen::VectorXd* warm) {
  if (epsilon <= 0.0) throw InvalidInput("solve_dcm_primal: epsilon must be > 0");
  const Eigen::Index n = model.size();
  const double eps_sq = epsilon * epsilon;

  DcmSolution sol;
  const Eigen::VectorXd uni = uniform_simplex(n);
  const double d_uni = model.value(uni);
  if (d_uni <= eps_sq + 1e-12 * std::max(1.0, eps_sq)) {
    sol.weights = uni;
    sol.distance_sq = d_uni;
    sol.log_likelihood = uni.array().log().sum();
    sol.dual_multiplier = 0.0;
    sol.constraint_active = false;
    sol.status = SolveStatus::Converged;
    return sol;
  }

  // Augmented Lagrangian on the normalized constraint c = D^2/eps^2 - 1.
  Eigen::VectorXd w = warm ? floor_normalize(*warm, cfg.weight_floor) : uni;
  double mu = 0.0;
  double rho = cfg.penalty_init;
  double prev_viol = std::numeric_limits<double>::infinity();
  double cval = 0.0;
  for (int outer = 0; outer < cfg.max_outer; ++outer) {
    auto fg = [&](const Eigen::VectorXd& wv, Eigen::VectorXd& grad) {
      Eigen::VectorXd gd;
      const double dval = model.value_grad(wv, gd);
      const double c = dval / eps_sq - 1.0;
      const double slack = mu + rho * c;
      double f = weight_entropy_neg(wv);
      grad = (1.0 + wv.array().log()).matrix();
      if (slack > 0.0) {
        f += (slack * slack - mu * mu) / (2.0 * rho);
        grad += (slack / eps_sq) * gd;
      } else {
        f -= mu * mu / (2.0 * rho);
      }
      return f;
    };
    InnerResult res = mirror_descent(fg, w, cfg);
    w = res.w;
    cval = model.value(w) / eps_sq - 1.0;
    mu = std::max(0.0, mu + rho * cval);
    sol.trace.push_back({res.objective, cval});
    if (std::abs(cval) <= cfg.constraint_tol) break;
    // Positive violation that stops shrinking under a large penalty means
    // the ball is out of reach.
    if (cval > 0.0 && cval > 0.9 * prev_viol && rho >= 1e4 * cfg.penalty_init) break;
    if (std::abs(cval) > 0.25 * prev_viol) rho *= cfg.penalty_growth;
    prev_viol = std::abs(cval);
  }

  sol.weights = w;
  sol.distance_sq = model.value(w);
  sol.log_likelihood = w.array().log().sum();
  sol.dual_multiplier = mu / eps_sq;
  sol.constraint_active = true;
  if (cval > std::max(1e-6, 10.0 * cfg.constraint_tol)) {
    sol.status = SolveStatus::Infeasible;
  } else if (std::abs(cval) > cfg.constraint_tol) {
    sol.status = SolveStatus::MaxIterations;
  } else {
    sol.status = SolveStatus::Converged;
  }
  return sol;
}

DcmSolution solve_dcm_primal(const Eigen::MatrixXd& x,
                             const EllipticalMixture& f_theta, double epsilon,
                             const MetricParams& mp, const OptConfig& cfg,
                             const Eigen::VectorXd* warm) {
  AndrewWeightModel model(f_theta, x, mp);
  return solve_dcm_primal(model, epsilon, cfg, warm);
}

DcmSolution solve_dcm_dual(const Eigen::MatrixXd& x,
                           const EllipticalMixture& f_theta, double lambda_star,
                           const MetricParams& mp, const OptConfig& cfg,
                           const Eigen::VectorXd* warm) {
  AndrewWeightModel model(f_theta, x, mp);
  return solve_dcm_dual(model, lambda_star, cfg, warm);
}

EtelSolution solve_etel_mcm(const Eigen::MatrixXd& g_values, const OptConfig& cfg) {
  const Eigen::Index n = g_values.rows();
  const Eigen::Index r = g_values.cols();
  if (!g_values.allFinite()) throw InvalidInput("etel: non-finite moment values");

  EtelSolution sol;
  sol.eta = Eigen::VectorXd::Zero(r);
  sol.weights = uniform_simplex(n);
  sol.hull_ok = false;
  sol.log_likelihood = kNegInf;

  // Newton on psi(eta) = logsumexp(G eta); the softmax probabilities at the
  // minimizer are exactly the tilted weights.
  Eigen::VectorXd eta = Eigen::VectorXd::Zero(r);
  Eigen::VectorXd p(n);
  auto eval = [&](const Eigen::VectorXd& e, Eigen::VectorXd* grad,
                  Eigen::MatrixXd* hess) {
    Eigen::ArrayXd a = (g_values * e).array();
    const double amax = a.maxCoeff();
    const Eigen::ArrayXd ex = (a - amax).exp();
    const double s = ex.sum();
    p = (ex / s).matrix();
    if (grad) *grad = g_values.transpose() * p;
    if (hess) {
      Eigen::MatrixXd gw = g_values;
      for (Eigen::Index i = 0; i < n; ++i) gw.row(i) *= p[i];
      *hess = g_values.transpose() * gw;
      if (grad) *hess -= (*grad) * grad->transpose();
    }
    return amax + std::log(s);
  };

  Eigen::VectorXd grad(r);
  Eigen::MatrixXd hess(r, r);
  double psi = eval(eta, &grad, &hess);
  bool converged = false;
  for (int it = 0; it < 200; ++it) {
    if (grad.cwiseAbs().maxCoeff() <= 1e-12) {
      converged = true;
      break;
    }
    Eigen::MatrixXd h = hess;
    h.diagonal().array() += 1e-12 * (1.0 + h.diagonal().cwiseAbs().maxCoeff());
    Eigen::LDLT<Eigen::MatrixXd> ldlt(h);
    Eigen::VectorXd dir = -ldlt.solve(grad);
    if (!dir.allFinite() || grad.dot(dir) >= 0.0) dir = -grad;
    double t = 1.0;
    for (int bt = 0; bt < 60; ++bt) {
      const Eigen::VectorXd cand = eta + t * dir;
      const double pc = eval(cand, nullptr, nullptr);
      if (pc <= psi + 1e-4 * t * grad.dot(dir)) {
        eta = cand;
        psi = pc;
        break;
      }
      t *= 0.5;
    }
    psi = eval(eta, &grad, &hess);
    if (eta.norm() > cfg.eta_bound) break;  // hull failure: dual diverges
  }

  if (converged && eta.norm() <= cfg.eta_bound) {
    eval(eta, &grad, nullptr);
    sol.hull_ok = true;
    sol.eta = eta;
    sol.weights = p;
    sol.log_likelihood = p.array().log().sum();
  }
  return sol;
}

EtelSolution solve_etel_mcm(
    const Eigen::MatrixXd& x,
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&,
                                        const Eigen::VectorXd&)>& g,
    const Eigen::VectorXd& theta, const OptConfig& cfg) {
  const Eigen::Index n = x.rows();
  const Eigen::VectorXd g0 = g(x.row(0).transpose(), theta);
  Eigen::MatrixXd gv(n, g0.size());
  gv.row(0) = g0.transpose();
  for (Eigen::Index i = 1; i < n; ++i) {
    gv.row(i) = g(x.row(i).transpose(), theta).transpose();
  }
  return solve_etel_mcm(gv, cfg);
}

}  // namespace dbetel
