#include "dbetel/fairness.hpp"

#include <Eigen/QR>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "dbetel/errors.hpp"
#include "dbetel/math.hpp"

namespace dbetel {

namespace {

struct Split {
  Eigen::MatrixXd xs, xt;
  Eigen::VectorXd ys, yt;
};

Split split_groups(const FairnessProblem& p) {
  const Eigen::Index n = p.features.rows();
  if (static_cast<Eigen::Index>(p.group.size()) != n || p.response.size() != n) {
    throw InvalidInput("fairness: features/response/group size mismatch");
  }
  Eigen::Index ns = 0;
  for (int g : p.group) {
    if (g != 0 && g != 1) throw InvalidInput("fairness: group labels must be 0 or 1");
    ns += (g == 0);
  }
  const Eigen::Index nt = n - ns;
  if (ns == 0 || nt == 0) throw InvalidInput("fairness: both groups must be nonempty");
  Split s;
  s.xs.resize(ns, p.features.cols());
  s.xt.resize(nt, p.features.cols());
  s.ys.resize(ns);
  s.yt.resize(nt);
  Eigen::Index is = 0, it = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (p.group[i] == 0) {
      s.xs.row(is) = p.features.row(i);
      s.ys[is++] = p.response[i];
    } else {
      s.xt.row(it) = p.features.row(i);
      s.yt[it++] = p.response[i];
    }
  }
  return s;
}

Eigen::VectorXd ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  if (qr.rank() < x.cols()) throw RankDeficient("fairness: group design is rank deficient");
  return qr.solve(y);
}

Eigen::VectorXd wls(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                    const Eigen::VectorXd& w) {
  const Eigen::VectorXd sw = w.cwiseSqrt();
  const Eigen::MatrixXd xw = x.array().colwise() * sw.array();
  const Eigen::VectorXd yw = y.array() * sw.array();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xw);
  if (qr.rank() < x.cols()) throw RankDeficient("fairness: weighted design is rank deficient");
  return qr.solve(yw);
}

double pooled_sigma_sq(const Split& s, const Eigen::VectorXd& theta_s,
                       const Eigen::VectorXd& theta_t, const Eigen::VectorXd& wt) {
  const Eigen::VectorXd rs = s.ys - s.xs * theta_s;
  const Eigen::VectorXd rt = s.yt - s.xt * theta_t;
  const double ms = rs.squaredNorm() / static_cast<double>(s.ys.size());
  const double mt = (wt.array() * rt.array().square()).sum();
  return 0.5 * (ms + mt);
}

DiscreteGapModel gap_model(const Split& s, const Eigen::VectorXd& theta_s,
                           const Eigen::VectorXd& theta_t, const MetricParams& mp) {
  const Eigen::VectorXd hs = s.xs * theta_s;
  const Eigen::VectorXd ht = s.xt * theta_t;
  const Eigen::VectorXd ws =
      Eigen::VectorXd::Constant(hs.size(), 1.0 / static_cast<double>(hs.size()));
  return DiscreteGapModel(hs, ws, ht, mp);
}

FairFit finish_fit(const FairnessProblem& p, const Split& s, Eigen::VectorXd theta_s,
                   Eigen::VectorXd theta_t, Eigen::VectorXd wt) {
  FairFit fit;
  fit.theta_s = std::move(theta_s);
  fit.theta_t = std::move(theta_t);
  fit.weights_t = std::move(wt);
  fit.sigma_sq = pooled_sigma_sq(s, fit.theta_s, fit.theta_t, fit.weights_t);
  const DiscreteGapModel gm = gap_model(s, fit.theta_s, fit.theta_t, p.metric);
  fit.gap_terms = gm.breakdown(fit.weights_t);
  fit.w_ar_gap = fit.gap_terms.total();
  return fit;
}

}  // namespace

double in_model_objective(const FairnessProblem& p, const Eigen::VectorXd& theta_s,
                          const Eigen::VectorXd& theta_t, double sigma_sq,
                          const Eigen::VectorXd& weights_t) {
  const Split s = split_groups(p);
  const Eigen::VectorXd rs = s.ys - s.xs * theta_s;
  const Eigen::VectorXd rt = s.yt - s.xt * theta_t;
  const double ls = rs.squaredNorm() / (2.0 * sigma_sq) / static_cast<double>(s.ys.size());
  const double lt = (weights_t.array() * rt.array().square()).sum() / (2.0 * sigma_sq);
  const DiscreteGapModel gm = gap_model(s, theta_s, theta_t, p.metric);
  const double gap = gm.value(weights_t);
  const double ent = (weights_t.array() * weights_t.array().log()).sum();
  // -log sigma^2 carries the Gaussian normalizer (unit total weight per
  // group), making the pooled mean square the exact sigma^2 profile.
  return -ls - lt - std::log(sigma_sq) - (1.0 - p.lambda_star) * gap -
         p.lambda_star * ent;
}

FairFit fit_unconstrained(const FairnessProblem& p) {
  const Split s = split_groups(p);
  const Eigen::VectorXd uni =
      Eigen::VectorXd::Constant(s.yt.size(), 1.0 / static_cast<double>(s.yt.size()));
  return finish_fit(p, s, ols(s.xs, s.ys), ols(s.xt, s.yt), uni);
}

FairFit fit_two_step(const FairnessProblem& p, const OptConfig& cfg) {
  if (p.lambda_star < 0.0 || p.lambda_star > 1.0) {
    throw InvalidInput("fairness: lambda_star must lie in [0, 1]");
  }
  const Split s = split_groups(p);
  const Eigen::VectorXd theta_s = ols(s.xs, s.ys);
  const Eigen::VectorXd theta_t = ols(s.xt, s.yt);
  const DiscreteGapModel gm = gap_model(s, theta_s, theta_t, p.metric);
  const DcmSolution sol =
      minimize_entropy_distance(gm, p.lambda_star, 1.0 - p.lambda_star, cfg);
  FairFit fit = finish_fit(p, s, theta_s, theta_t, sol.weights);
  fit.converged = sol.status != SolveStatus::MaxIterations;
  return fit;
}

FairFit fit_in_model(const FairnessProblem& p, const OptConfig& cfg) {
  const Split s = split_groups(p);
  FairFit cur = fit_two_step(p, cfg);
  double fval = in_model_objective(p, cur.theta_s, cur.theta_t, cur.sigma_sq, cur.weights_t);
  cur.objective_trace.push_back(fval);

  bool converged = false;
  for (int it = 0; it < cfg.max_outer; ++it) {
    // (a) damped likelihood block: group-S OLS, weighted group-T LS,
    // closed-form sigma^2; backtrack toward the previous point if the full
    // objective would decrease (the gap term also moves with theta).
    const Eigen::VectorXd prop_s = ols(s.xs, s.ys);
    const Eigen::VectorXd prop_t = wls(s.xt, s.yt, cur.weights_t);
    Eigen::VectorXd best_s = cur.theta_s, best_t = cur.theta_t;
    double best_val = fval;
    double step = 1.0;
    for (int bt = 0; bt < 20; ++bt) {
      const Eigen::VectorXd cand_s = cur.theta_s + step * (prop_s - cur.theta_s);
      const Eigen::VectorXd cand_t = cur.theta_t + step * (prop_t - cur.theta_t);
      const double sig = pooled_sigma_sq(s, cand_s, cand_t, cur.weights_t);
      const double v = in_model_objective(p, cand_s, cand_t, sig, cur.weights_t);
      if (v >= best_val) {
        best_s = cand_s;
        best_t = cand_t;
        best_val = v;
        break;
      }
      step *= 0.5;
    }
    cur.theta_s = best_s;
    cur.theta_t = best_t;
    cur.sigma_sq = pooled_sigma_sq(s, cur.theta_s, cur.theta_t, cur.weights_t);

    // (b) the two-step weight program at the current theta, accepted only
    // when the joint objective does not decrease.
    const DiscreteGapModel gm = gap_model(s, cur.theta_s, cur.theta_t, p.metric);
    const DcmSolution sol = minimize_entropy_distance(
        gm, p.lambda_star, 1.0 - p.lambda_star, cfg, &cur.weights_t);
    const double v_new = in_model_objective(p, cur.theta_s, cur.theta_t, cur.sigma_sq,
                                            sol.weights);
    const double v_cur = in_model_objective(p, cur.theta_s, cur.theta_t, cur.sigma_sq,
                                            cur.weights_t);
    if (v_new >= v_cur) cur.weights_t = sol.weights;

    const double fnew = in_model_objective(p, cur.theta_s, cur.theta_t, cur.sigma_sq,
                                           cur.weights_t);
    cur.objective_trace.push_back(fnew);
    if (std::abs(fnew - fval) < 1e-8 * (1.0 + std::abs(fnew))) {
      fval = fnew;
      converged = true;
      break;
    }
    fval = fnew;
  }

  FairFit fit = finish_fit(p, s, cur.theta_s, cur.theta_t, cur.weights_t);
  fit.objective_trace = cur.objective_trace;
  fit.converged = converged;
  return fit;
}

CdfReport group_cdf_report(const FairFit& fit, const FairnessProblem& p) {
  const Split s = split_groups(p);
  const auto step_cdf = [](const Eigen::VectorXd& values, const Eigen::VectorXd& weights,
                           Eigen::VectorXd& z, Eigen::VectorXd& cdf) {
    std::vector<int> idx(values.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) { return values[a] < values[b]; });
    z.resize(values.size());
    cdf.resize(values.size());
    double cum = 0.0;
    for (Eigen::Index i = 0; i < values.size(); ++i) {
      z[i] = values[idx[static_cast<std::size_t>(i)]];
      cum += weights[idx[static_cast<std::size_t>(i)]];
      cdf[i] = cum;
    }
    cdf[values.size() - 1] = 1.0;
  };
  CdfReport rep;
  const Eigen::VectorXd hs = s.xs * fit.theta_s;
  const Eigen::VectorXd ht = s.xt * fit.theta_t;
  const Eigen::VectorXd ws =
      Eigen::VectorXd::Constant(hs.size(), 1.0 / static_cast<double>(hs.size()));
  step_cdf(hs, ws, rep.z_s, rep.cdf_s);
  step_cdf(ht, fit.weights_t, rep.z_t, rep.cdf_t);
  rep.gap_terms = fit.gap_terms;
  return rep;
}

double fair_predict(const FairFit& fit, const FairnessProblem& p,
                    const Eigen::VectorXd& x) {
  const Split s = split_groups(p);
  const Eigen::Index nt = s.xt.rows();
  const Eigen::Index d = s.xt.cols();
  Eigen::VectorXd h(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    const double sd = std::sqrt(math::sample_variance(s.xt.col(j)));
    h[j] = std::max(1e-8, 1.06 * sd * std::pow(static_cast<double>(nt), -1.0 / (d + 4)));
  }
  const Eigen::VectorXd ht = s.xt * fit.theta_t;
  double num = 0.0, den = 0.0;
  for (Eigen::Index i = 0; i < nt; ++i) {
    const Eigen::ArrayXd u = (s.xt.row(i).transpose() - x).array() / h.array();
    const double k = std::exp(-0.5 * u.square().sum());
    num += fit.weights_t[i] * k * ht[i];
    den += fit.weights_t[i] * k;
  }
  return den > 0.0 ? num / den : ht.mean();
}

}  // namespace dbetel
