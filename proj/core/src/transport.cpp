#include "dbetel/transport.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>

#include "dbetel/errors.hpp"
#include "dbetel/math.hpp"

namespace dbetel {

namespace {

void check_simplex(const Eigen::VectorXd& s, const char* what) {
  if (s.size() < 1) throw InvalidInput(std::string(what) + ": empty simplex");
  if ((s.array() <= 0.0).any()) {
    throw InvalidInput(std::string(what) + ": nonpositive weight");
  }
  if (std::abs(s.sum() - 1.0) > 1e-9) {
    throw InvalidInput(std::string(what) + ": weights do not sum to 1");
  }
}

double entropy_of(const Eigen::MatrixXd& plan) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < plan.rows(); ++i) {
    for (Eigen::Index j = 0; j < plan.cols(); ++j) {
      const double p = plan(i, j);
      if (p > 0.0) h -= p * std::log(p);
    }
  }
  return h;
}

double lse(const Eigen::ArrayXd& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v - m).exp().sum());
}

}  // namespace

// ---------------------------------------------------------------------------
// EllipticalMixture

EllipticalMixture::EllipticalMixture(std::vector<MixtureComponent> components,
                                     Generator generator, double student_df)
    : components_(std::move(components)),
      generator_(generator),
      student_df_(student_df) {
  if (components_.empty()) throw InvalidInput("mixture: no components");
  dim_ = static_cast<int>(components_.front().mean.size());
  double wsum = 0.0;
  for (const auto& c : components_) {
    if (c.weight <= 0.0) throw InvalidInput("mixture: component weight <= 0");
    wsum += c.weight;
    if (c.mean.size() != dim_ || c.scale.rows() != dim_ || c.scale.cols() != dim_) {
      throw InvalidInput("mixture: inconsistent component dimensions");
    }
    if (!c.mean.allFinite() || !c.scale.allFinite()) {
      throw InvalidInput("mixture: non-finite component parameters");
    }
    if ((c.scale - c.scale.transpose()).cwiseAbs().maxCoeff() > 1e-8) {
      throw InvalidInput("mixture: scale matrix not symmetric");
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c.scale);
    if (es.eigenvalues().minCoeff() < -1e-10) {
      throw InvalidInput("mixture: scale matrix not PSD");
    }
  }
  if (std::abs(wsum - 1.0) > 1e-12) {
    throw InvalidInput("mixture: component weights do not sum to 1");
  }
  switch (generator_) {
    case Generator::Gaussian:
      nu_h_ = 1.0;
      break;
    case Generator::StudentT:
      if (student_df_ <= 2.0) {
        throw InvalidInput("mixture: Student-t generator needs df > 2");
      }
      nu_h_ = student_df_ / (student_df_ - 2.0);
      break;
  }
}

EllipticalMixture EllipticalMixture::single_gaussian(const Eigen::VectorXd& mean,
                                                     const Eigen::MatrixXd& scale) {
  return EllipticalMixture({MixtureComponent{1.0, mean, scale}});
}

Eigen::VectorXd EllipticalMixture::weights() const {
  Eigen::VectorXd s(size());
  for (int k = 0; k < size(); ++k) s[k] = components_[k].weight;
  return s;
}

double EllipticalMixture::log_pdf(const Eigen::VectorXd& x) const {
  Eigen::ArrayXd terms(size());
  for (int k = 0; k < size(); ++k) {
    const auto& c = components_[k];
    Eigen::LLT<Eigen::MatrixXd> llt(c.scale);
    if (llt.info() != Eigen::Success) {
      throw InvalidInput("mixture log_pdf: singular component scale");
    }
    const Eigen::VectorXd diff = x - c.mean;
    const Eigen::VectorXd half = llt.matrixL().solve(diff);
    const double quad = half.squaredNorm();
    double logdet = 0.0;
    for (int i = 0; i < dim_; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
    double lp;
    if (generator_ == Generator::Gaussian) {
      lp = -0.5 * (dim_ * std::log(2.0 * math::kPi) + logdet + quad);
    } else {
      const double nu = student_df_;
      lp = std::lgamma(0.5 * (nu + dim_)) - std::lgamma(0.5 * nu) -
           0.5 * dim_ * std::log(nu * math::kPi) - 0.5 * logdet -
           0.5 * (nu + dim_) * std::log1p(quad / nu);
    }
    terms[k] = std::log(c.weight) + lp;
  }
  return lse(terms);
}

double EllipticalMixture::marginal_cdf(int j, double x) const {
  double acc = 0.0;
  for (const auto& c : components_) {
    const double m = c.mean[j];
    const double sd = std::sqrt(std::max(0.0, c.scale(j, j)));
    double u;
    if (sd == 0.0) {
      u = (x >= m) ? 1.0 : 0.0;
    } else if (generator_ == Generator::Gaussian) {
      u = math::norm_cdf((x - m) / sd);
    } else {
      u = math::student_t_cdf((x - m) / sd, student_df_);
    }
    acc += c.weight * u;
  }
  return acc;
}

double EllipticalMixture::marginal_pdf(int j, double x) const {
  double acc = 0.0;
  for (const auto& c : components_) {
    const double sd = std::sqrt(std::max(0.0, c.scale(j, j)));
    if (sd == 0.0) continue;
    const double u = (x - c.mean[j]) / sd;
    const double f = generator_ == Generator::Gaussian
                         ? math::norm_pdf(u)
                         : math::student_t_pdf(u, student_df_);
    acc += c.weight * f / sd;
  }
  return acc;
}

double EllipticalMixture::marginal_quantile(int j, double z) const {
  if (components_.size() == 1) {
    const auto& c = components_.front();
    const double sd = std::sqrt(std::max(0.0, c.scale(j, j)));
    if (sd == 0.0) return c.mean[j];
    const double q = generator_ == Generator::Gaussian
                         ? math::norm_quantile(z)
                         : math::student_t_quantile(z, student_df_);
    return c.mean[j] + sd * q;
  }
  double mlo = std::numeric_limits<double>::infinity();
  double mhi = -mlo;
  double smax = 0.0;
  for (const auto& c : components_) {
    mlo = std::min(mlo, c.mean[j]);
    mhi = std::max(mhi, c.mean[j]);
    smax = std::max(smax, std::sqrt(std::max(0.0, c.scale(j, j))));
  }
  double lo = mlo - 12.0 * smax;
  double hi = mhi + 12.0 * smax;
  if (hi - lo < 1e-12) {
    const double pad = 1e-6 * (1.0 + std::abs(lo));
    lo -= pad;
    hi += pad;
  }
  return math::invert_monotone(
      [this, j](double x) { return marginal_cdf(j, x); }, z, lo, hi, 1e-10);
}

// ---------------------------------------------------------------------------
// WeightedDiscrete

WeightedDiscrete::WeightedDiscrete(Eigen::MatrixXd points, Eigen::VectorXd weights)
    : points_(std::move(points)), weights_(std::move(weights)) {
  if (points_.rows() < 1) throw InvalidInput("discrete measure: no support points");
  if (points_.rows() != weights_.size()) {
    throw InvalidInput("discrete measure: points/weights size mismatch");
  }
  if (!points_.allFinite()) throw InvalidInput("discrete measure: non-finite point");
  if ((weights_.array() <= 0.0).any()) {
    throw InvalidInput("discrete measure: nonpositive weight");
  }
  if (std::abs(weights_.sum() - 1.0) > 1e-12) {
    throw InvalidInput("discrete measure: weights do not sum to 1");
  }
}

WeightedDiscrete WeightedDiscrete::uniform(Eigen::MatrixXd points) {
  const Eigen::Index n = points.rows();
  return WeightedDiscrete(std::move(points),
                          Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n)));
}

WeightedDiscrete WeightedDiscrete::marginal(int j) const {
  return WeightedDiscrete(points_.col(j), weights_);
}

// ---------------------------------------------------------------------------
// Sinkhorn

namespace {

TransportResult sinkhorn_plain(const Eigen::MatrixXd& cost,
                               const Eigen::VectorXd& s0,
                               const Eigen::VectorXd& s1, double lambda_alpha,
                               const SinkhornOptions& opts) {
  const Eigen::MatrixXd kernel = cost.unaryExpr(
      [lambda_alpha](double c) { return std::exp(-lambda_alpha * c); });
  Eigen::VectorXd u = Eigen::VectorXd::Ones(s0.size());
  Eigen::VectorXd v = Eigen::VectorXd::Ones(s1.size());
  TransportResult out;
  for (int it = 1; it <= opts.max_iter; ++it) {
    u = s0.array() / (kernel * v).array();
    v = s1.array() / (kernel.transpose() * u).array();
    if (!u.allFinite() || !v.allFinite() || (u.array() == 0.0).any() ||
        (v.array() == 0.0).any()) {
      throw NumericalUnderflow("sinkhorn: scaling vector left the float range");
    }
    out.plan = u.asDiagonal() * kernel * v.asDiagonal();
    const double row_err = (out.plan.rowwise().sum() - s0).cwiseAbs().maxCoeff();
    const double col_err =
        (out.plan.colwise().sum().transpose() - s1).cwiseAbs().maxCoeff();
    out.marginal_error = std::max(row_err, col_err);
    out.iterations = it;
    if (out.marginal_error <= opts.tol) {
      out.converged = true;
      break;
    }
  }
  return out;
}

TransportResult sinkhorn_log(const Eigen::MatrixXd& cost,
                             const Eigen::VectorXd& s0,
                             const Eigen::VectorXd& s1, double lambda_alpha,
                             const SinkhornOptions& opts) {
  const double reg = 1.0 / lambda_alpha;
  const Eigen::Index n0 = s0.size(), n1 = s1.size();
  Eigen::VectorXd f = Eigen::VectorXd::Zero(n0);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(n1);
  const Eigen::VectorXd log_s0 = s0.array().log();
  const Eigen::VectorXd log_s1 = s1.array().log();
  TransportResult out;
  for (int it = 1; it <= opts.max_iter; ++it) {
    for (Eigen::Index i = 0; i < n0; ++i) {
      const Eigen::ArrayXd row = (g.array() - cost.row(i).transpose().array()) / reg;
      f[i] = reg * (log_s0[i] - lse(row));
    }
    for (Eigen::Index j = 0; j < n1; ++j) {
      const Eigen::ArrayXd col = (f.array() - cost.col(j).array()) / reg;
      g[j] = reg * (log_s1[j] - lse(col));
    }
    out.plan.resize(n0, n1);
    for (Eigen::Index i = 0; i < n0; ++i) {
      for (Eigen::Index j = 0; j < n1; ++j) {
        out.plan(i, j) = std::exp((f[i] + g[j] - cost(i, j)) / reg);
      }
    }
    const double row_err = (out.plan.rowwise().sum() - s0).cwiseAbs().maxCoeff();
    const double col_err =
        (out.plan.colwise().sum().transpose() - s1).cwiseAbs().maxCoeff();
    out.marginal_error = std::max(row_err, col_err);
    out.iterations = it;
    if (out.marginal_error <= opts.tol) {
      out.converged = true;
      break;
    }
  }
  return out;
}

}  // namespace

TransportResult sinkhorn(const Eigen::MatrixXd& cost, const Eigen::VectorXd& s0,
                         const Eigen::VectorXd& s1, double lambda_alpha,
                         const SinkhornOptions& opts) {
  if (cost.rows() != s0.size() || cost.cols() != s1.size()) {
    throw InvalidInput("sinkhorn: cost/marginal size mismatch");
  }
  if (!cost.allFinite() || cost.minCoeff() < 0.0) {
    throw InvalidInput("sinkhorn: cost must be finite and nonnegative");
  }
  if (lambda_alpha <= 0.0) throw InvalidInput("sinkhorn: lambda_alpha must be > 0");
  check_simplex(s0, "sinkhorn s0");
  check_simplex(s1, "sinkhorn s1");

  bool use_log = opts.mode == SinkhornOptions::Mode::Log;
  if (opts.mode == SinkhornOptions::Mode::Auto) {
    use_log = cost.maxCoeff() * lambda_alpha > 30.0;
  }
  TransportResult out = use_log ? sinkhorn_log(cost, s0, s1, lambda_alpha, opts)
                                : sinkhorn_plain(cost, s0, s1, lambda_alpha, opts);
  out.cost = (out.plan.array() * cost.array()).sum();
  out.regularized_cost = out.cost - entropy_of(out.plan) / lambda_alpha;
  return out;
}

// ---------------------------------------------------------------------------
// 1-D quantile distances

double w2_1d_discrete(const WeightedDiscrete& a, const WeightedDiscrete& b) {
  if (a.dim() != 1 || b.dim() != 1) {
    throw InvalidInput("w2_1d_discrete: measures must be one-dimensional");
  }
  // Sorted atoms with cumulative weights, last entry forced to 1.
  const auto sorted = [](const WeightedDiscrete& m) {
    std::vector<std::pair<double, double>> s(m.size());
    for (int i = 0; i < m.size(); ++i) s[i] = {m.points()(i, 0), m.weights()[i]};
    std::sort(s.begin(), s.end());
    double cum = 0.0;
    for (auto& e : s) {
      cum += e.second;
      e.second = cum;
    }
    s.back().second = 1.0;
    return s;
  };
  const auto sa = sorted(a);
  const auto sb = sorted(b);
  std::size_t ia = 0, ib = 0;
  double z = 0.0, acc = 0.0;
  while (z < 1.0) {
    const double znext = std::min(sa[ia].second, sb[ib].second);
    const double d = sa[ia].first - sb[ib].first;
    acc += (znext - z) * d * d;
    z = znext;
    if (sa[ia].second <= z && ia + 1 < sa.size()) ++ia;
    if (sb[ib].second <= z && ib + 1 < sb.size()) ++ib;
  }
  return acc;
}

double w2_1d_mixture_vs_discrete(const EllipticalMixture& p, int j,
                                 const WeightedDiscrete& q, int quad_points) {
  if (q.dim() != 1) throw InvalidInput("w2_1d_mixture_vs_discrete: q must be 1-D");
  if (quad_points < 64) {
    throw InvalidInput("w2_1d_mixture_vs_discrete: quad_points must be >= 64");
  }
  std::vector<std::pair<double, double>> sq(q.size());
  for (int i = 0; i < q.size(); ++i) sq[i] = {q.points()(i, 0), q.weights()[i]};
  std::sort(sq.begin(), sq.end());

  double acc = 0.0;
  std::size_t idx = 0;
  double cum = sq[0].second;
  for (int k = 0; k < quad_points; ++k) {
    const double z = (k + 0.5) / quad_points;
    while (cum < z && idx + 1 < sq.size()) cum += sq[++idx].second;
    const double diff = p.marginal_quantile(j, z) - sq[idx].first;
    acc += diff * diff;
  }
  return acc / quad_points;
}

// ---------------------------------------------------------------------------
// ANDREW

AndrewResult andrew(const EllipticalMixture& p0, const WeightedDiscrete& p1,
                    double lambda_alpha, int quad_points) {
  if (p0.dim() != p1.dim()) throw InvalidInput("andrew: dimension mismatch");
  const int k0 = p0.size();
  const int k1 = p1.size();
  Eigen::MatrixXd cost(k0, k1);
  for (int k = 0; k < k0; ++k) {
    for (int l = 0; l < k1; ++l) {
      cost(k, l) =
          (p0.components()[k].mean - p1.points().row(l).transpose()).squaredNorm();
    }
  }
  AndrewResult out;
  out.transport = sinkhorn(cost, p0.weights(), p1.weights(), lambda_alpha);
  out.terms.ot_term = out.transport.regularized_cost;
  for (int k = 0; k < k0; ++k) {
    out.terms.trace_term +=
        p0.nu_h() * p0.components()[k].weight * p0.components()[k].scale.trace();
  }
  for (int j = 0; j < p0.dim(); ++j) {
    out.terms.marginal_term +=
        w2_1d_mixture_vs_discrete(p0, j, p1.marginal(j), quad_points);
  }
  out.value = out.terms.total();
  return out;
}

double mw2(const EllipticalMixture& p0, const WeightedDiscrete& p1,
           double lambda_alpha) {
  if (p0.dim() != p1.dim()) throw InvalidInput("mw2: dimension mismatch");
  const int k0 = p0.size();
  const int k1 = p1.size();
  Eigen::MatrixXd cost(k0, k1);
  for (int k = 0; k < k0; ++k) {
    for (int l = 0; l < k1; ++l) {
      cost(k, l) =
          (p0.components()[k].mean - p1.points().row(l).transpose()).squaredNorm();
    }
  }
  const TransportResult tr = sinkhorn(cost, p0.weights(), p1.weights(), lambda_alpha);
  double trace_term = 0.0;
  for (int k = 0; k < k0; ++k) {
    trace_term +=
        p0.nu_h() * p0.components()[k].weight * p0.components()[k].scale.trace();
  }
  return tr.regularized_cost + trace_term;
}

// ---------------------------------------------------------------------------
// Piecewise-linear quantile tables

namespace detail {

const Eigen::VectorXd& PwlQuantileTable::grid() {
  static const Eigen::VectorXd g = [] {
    std::vector<double> z;
    for (int k = 40; k >= 8; --k) z.push_back(std::ldexp(1.0, -k));
    const double lo = 1.0 / 128.0, hi = 1.0 - 1.0 / 128.0;
    const int ncore = 1025;
    for (int i = 0; i < ncore; ++i) z.push_back(lo + (hi - lo) * i / (ncore - 1));
    for (int k = 8; k <= 40; ++k) z.push_back(1.0 - std::ldexp(1.0, -k));
    Eigen::VectorXd out(static_cast<Eigen::Index>(z.size()));
    for (std::size_t i = 0; i < z.size(); ++i) out[static_cast<Eigen::Index>(i)] = z[i];
    return out;
  }();
  return g;
}

PwlQuantileTable PwlQuantileTable::from_quantile_fn(
    const std::function<double(double)>& q) {
  const Eigen::VectorXd& z = grid();
  PwlQuantileTable t;
  t.q_.resize(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) t.q_[i] = q(z[i]);
  t.cg1_.resize(z.size());
  t.cg2_.resize(z.size());
  // Constant extension below the first node.
  t.cg1_[0] = t.q_[0] * z[0];
  t.cg2_[0] = t.q_[0] * t.q_[0] * z[0];
  for (Eigen::Index i = 1; i < z.size(); ++i) {
    const double h = z[i] - z[i - 1];
    const double qa = t.q_[i - 1], qb = t.q_[i];
    t.cg1_[i] = t.cg1_[i - 1] + 0.5 * h * (qa + qb);
    t.cg2_[i] = t.cg2_[i - 1] + h * (qa * qa + qa * qb + qb * qb) / 3.0;
  }
  return t;
}

const PwlQuantileTable& PwlQuantileTable::std_normal() {
  static const PwlQuantileTable t =
      from_quantile_fn([](double z) { return math::norm_quantile(z); });
  return t;
}

const PwlQuantileTable& PwlQuantileTable::std_student_t(double df) {
  static std::map<double, PwlQuantileTable> cache;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(df);
  if (it == cache.end()) {
    it = cache.emplace(df, from_quantile_fn([df](double z) {
                        return math::student_t_quantile(z, df);
                      })).first;
  }
  return it->second;
}

namespace {

// Index of the grid segment containing z: largest i with grid[i] <= z.
Eigen::Index segment_of(double z) {
  const Eigen::VectorXd& g = PwlQuantileTable::grid();
  const double* begin = g.data();
  const double* end = g.data() + g.size();
  const double* it = std::upper_bound(begin, end, z);
  if (it == begin) return -1;
  return static_cast<Eigen::Index>(it - begin) - 1;
}

}  // namespace

double PwlQuantileTable::quantile(double z) const {
  const Eigen::VectorXd& g = grid();
  const Eigen::Index i = segment_of(z);
  if (i < 0) return q_[0];
  if (i + 1 >= g.size()) return q_[g.size() - 1];
  const double t = (z - g[i]) / (g[i + 1] - g[i]);
  return q_[i] + t * (q_[i + 1] - q_[i]);
}

double PwlQuantileTable::g1(double z) const {
  const Eigen::VectorXd& g = grid();
  if (z <= 0.0) return 0.0;
  const Eigen::Index i = segment_of(z);
  if (i < 0) return q_[0] * z;
  if (i + 1 >= g.size()) return cg1_[g.size() - 1] + q_[g.size() - 1] * (z - g[g.size() - 1]);
  const double h = z - g[i];
  const double qm = quantile(z);
  return cg1_[i] + 0.5 * h * (q_[i] + qm);
}

double PwlQuantileTable::g2(double z) const {
  const Eigen::VectorXd& g = grid();
  if (z <= 0.0) return 0.0;
  const Eigen::Index i = segment_of(z);
  if (i < 0) return q_[0] * q_[0] * z;
  if (i + 1 >= g.size()) {
    const double ql = q_[g.size() - 1];
    return cg2_[g.size() - 1] + ql * ql * (z - g[g.size() - 1]);
  }
  const double h = z - g[i];
  const double qa = q_[i], qm = quantile(z);
  return cg2_[i] + h * (qa * qa + qa * qm + qm * qm) / 3.0;
}

MarginalQuantile MarginalQuantile::affine(const PwlQuantileTable& base,
                                          double shift, double scale) {
  MarginalQuantile m;
  m.base_ = &base;
  m.shift_ = shift;
  m.scale_ = scale;
  return m;
}

MarginalQuantile MarginalQuantile::from_mixture(const EllipticalMixture& mix, int j) {
  if (mix.size() == 1) {
    const auto& c = mix.components()[0];
    const double sd = std::sqrt(std::max(0.0, c.scale(j, j)));
    const PwlQuantileTable& base = mix.generator() == Generator::Gaussian
                                       ? PwlQuantileTable::std_normal()
                                       : PwlQuantileTable::std_student_t(mix.student_df());
    return affine(base, c.mean[j], sd);
  }
  // Proper mixture: one Newton-accelerated sweep over the grid nodes, each
  // node bracketed from below by the previous quantile.
  const Eigen::VectorXd& z = PwlQuantileTable::grid();
  const double qlo = mix.marginal_quantile(j, z[0]);
  const double qhi = mix.marginal_quantile(j, z[z.size() - 1]);
  MarginalQuantile m;
  double prev = qlo;
  Eigen::Index node = 0;
  m.owned_ = std::make_shared<PwlQuantileTable>(
      PwlQuantileTable::from_quantile_fn([&](double zz) {
        if (node++ == 0) return qlo;
        double lo = prev, hi = qhi;
        double x = prev;
        double fx = mix.marginal_cdf(j, x) - zz;
        for (int it = 0; it < 80; ++it) {
          if (std::abs(fx) < 1e-12 || hi - lo < 1e-11 * (1.0 + std::abs(x))) break;
          if (fx < 0.0) lo = x; else hi = x;
          const double px = mix.marginal_pdf(j, x);
          double xn = px > 1e-300 ? x - fx / px : 0.5 * (lo + hi);
          if (!(xn > lo && xn < hi)) xn = 0.5 * (lo + hi);
          x = xn;
          fx = mix.marginal_cdf(j, x) - zz;
        }
        prev = x;
        return x;
      }));
  m.base_ = m.owned_.get();
  return m;
}

double MarginalQuantile::quantile(double z) const {
  return shift_ + scale_ * base_->quantile(z);
}

double MarginalQuantile::g1(double z) const {
  return shift_ * z + scale_ * base_->g1(z);
}

double MarginalQuantile::g2(double z) const {
  return shift_ * shift_ * z + 2.0 * shift_ * scale_ * base_->g1(z) +
         scale_ * scale_ * base_->g2(z);
}

double quantile_term_value(const MarginalQuantile& mq,
                           const Eigen::VectorXd& atoms_sorted,
                           const Eigen::VectorXd& w_sorted) {
  const Eigen::Index n = atoms_sorted.size();
  double acc = 0.0;
  double wlo = 0.0, g1lo = 0.0, g2lo = 0.0;
  double cum = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    cum += w_sorted[k];
    const double whi = (k + 1 == n) ? 1.0 : cum;
    const double g1hi = mq.g1(whi);
    const double g2hi = mq.g2(whi);
    const double a = atoms_sorted[k];
    acc += (g2hi - g2lo) - 2.0 * a * (g1hi - g1lo) + a * a * (whi - wlo);
    wlo = whi;
    g1lo = g1hi;
    g2lo = g2hi;
  }
  return acc;
}

void quantile_term_value_grad(const MarginalQuantile& mq,
                              const Eigen::VectorXd& atoms_sorted,
                              const Eigen::VectorXd& w_sorted, double& value,
                              Eigen::VectorXd& grad_sorted) {
  const Eigen::Index n = atoms_sorted.size();
  value = 0.0;
  grad_sorted.setZero(n);
  Eigen::VectorXd dt(n > 1 ? n - 1 : 0);
  double wlo = 0.0, g1lo = 0.0, g2lo = 0.0;
  double cum = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    cum += w_sorted[k];
    const double whi = (k + 1 == n) ? 1.0 : cum;
    const double g1hi = mq.g1(whi);
    const double g2hi = mq.g2(whi);
    const double a = atoms_sorted[k];
    value += (g2hi - g2lo) - 2.0 * a * (g1hi - g1lo) + a * a * (whi - wlo);
    if (k + 1 < n) {
      const double qk = mq.quantile(whi);
      const double d0 = qk - atoms_sorted[k];
      const double d1 = qk - atoms_sorted[k + 1];
      dt[k] = d0 * d0 - d1 * d1;
    }
    wlo = whi;
    g1lo = g1hi;
    g2lo = g2hi;
  }
  // grad wrt the i-th sorted weight is the sum of dt over breakpoints k >= i.
  double suffix = 0.0;
  for (Eigen::Index i = n - 1; i >= 0; --i) {
    grad_sorted[i] = suffix;
    if (i > 0) suffix += dt[i - 1];
  }
}

double sinkhorn_value_colgrad(const Eigen::MatrixXd& cost,
                              const Eigen::VectorXd& s0,
                              const Eigen::VectorXd& s1, double lambda_alpha,
                              double tol, int max_iter,
                              SinkhornPotentials* warm,
                              Eigen::VectorXd* grad_s1) {
  const double reg = 1.0 / lambda_alpha;
  const Eigen::Index n0 = s0.size(), n1 = s1.size();
  Eigen::VectorXd f, g;
  const bool have_warm =
      warm && warm->valid && warm->f.size() == n0 && warm->g.size() == n1;
  if (have_warm) {
    f = warm->f;
    g = warm->g;
  } else {
    f = Eigen::VectorXd::Zero(n0);
    g = Eigen::VectorXd::Zero(n1);
  }
  const Eigen::ArrayXd log_s0 = s0.array().log();
  const Eigen::ArrayXd log_s1 = s1.array().log();

  auto sweep = [&](double r, double stop, int iters) {
    double row_err = std::numeric_limits<double>::infinity();
    for (int it = 0; it < iters; ++it) {
      for (Eigen::Index i = 0; i < n0; ++i) {
        const Eigen::ArrayXd row = (g.array() - cost.row(i).transpose().array()) / r;
        f[i] = r * (log_s0[i] - lse(row));
      }
      for (Eigen::Index j = 0; j < n1; ++j) {
        const Eigen::ArrayXd col = (f.array() - cost.col(j).array()) / r;
        g[j] = r * (log_s1[j] - lse(col));
      }
      // Column sums are exact after the g-update; track the row error.
      row_err = 0.0;
      for (Eigen::Index i = 0; i < n0; ++i) {
        double rs = 0.0;
        for (Eigen::Index j = 0; j < n1; ++j) {
          rs += std::exp((f[i] + g[j] - cost(i, j)) / r);
        }
        row_err = std::max(row_err, std::abs(rs - s0[i]));
      }
      if (row_err <= stop) break;
    }
  };

  // Cold starts anneal the regularization down from the cost scale;
  // otherwise convergence stalls when 1/lambda_alpha is far below it.
  if (!have_warm) {
    const double span = cost.maxCoeff() - cost.minCoeff();
    double r = std::max(reg, span / 8.0);
    while (r > reg * 1.5) {
      sweep(r, std::max(tol, 1e-4), 200);
      r = std::max(reg, r / 3.0);
    }
  }
  sweep(reg, tol, max_iter);
  if (warm) {
    warm->f = f;
    warm->g = g;
    warm->valid = true;
  }
  double value = 0.0;
  for (Eigen::Index i = 0; i < n0; ++i) {
    for (Eigen::Index j = 0; j < n1; ++j) {
      const double lp = (f[i] + g[j] - cost(i, j)) / reg;
      const double p = std::exp(lp);
      if (p > 0.0) value += p * (cost(i, j) + reg * lp);
    }
  }
  if (grad_s1) *grad_s1 = g;
  return value;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// AndrewWeightModel

AndrewWeightModel::AndrewWeightModel(const EllipticalMixture& mixture,
                                     const Eigen::MatrixXd& points,
                                     const MetricParams& params)
    : points_rows_(points.rows()), dim_(mixture.dim()), params_(params) {
  if (points.cols() != mixture.dim()) {
    throw InvalidInput("andrew model: dimension mismatch");
  }
  trace_term_ = 0.0;
  for (const auto& c : mixture.components()) {
    trace_term_ += mixture.nu_h() * c.weight * c.scale.trace();
  }
  s0_ = mixture.weights();
  cost_.resize(mixture.size(), points.rows());
  for (int k = 0; k < mixture.size(); ++k) {
    for (Eigen::Index l = 0; l < points.rows(); ++l) {
      cost_(k, l) = (mixture.components()[k].mean - points.row(l).transpose()).squaredNorm();
    }
  }
  marginals_.reserve(dim_);
  order_.resize(dim_);
  atoms_sorted_.resize(dim_);
  for (int j = 0; j < dim_; ++j) {
    marginals_.push_back(detail::MarginalQuantile::from_mixture(mixture, j));
    order_[j].resize(points.rows());
    std::iota(order_[j].begin(), order_[j].end(), 0);
    std::sort(order_[j].begin(), order_[j].end(),
              [&](int a, int b) { return points(a, j) < points(b, j); });
    atoms_sorted_[j].resize(points.rows());
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
      atoms_sorted_[j][i] = points(order_[j][static_cast<std::size_t>(i)], j);
    }
  }
}

double AndrewWeightModel::ot_value(const Eigen::VectorXd& w,
                                   Eigen::VectorXd* grad) const {
  const double reg = 1.0 / params_.lambda_alpha;
  if (s0_.size() == 1) {
    // Unique coupling: plan equals w, entropy is the weight entropy.
    double value = 0.0;
    for (Eigen::Index l = 0; l < w.size(); ++l) {
      value += w[l] * (cost_(0, l) + reg * std::log(w[l]));
    }
    if (grad) {
      grad->resize(w.size());
      for (Eigen::Index l = 0; l < w.size(); ++l) {
        (*grad)[l] = cost_(0, l) + reg * (1.0 + std::log(w[l]));
      }
    }
    return value;
  }
  return detail::sinkhorn_value_colgrad(cost_, s0_, w, params_.lambda_alpha,
                                        params_.sinkhorn_tol,
                                        params_.sinkhorn_max_iter, &warm_, grad);
}

double AndrewWeightModel::value(const Eigen::VectorXd& w) const {
  double acc = ot_value(w, nullptr) + trace_term_;
  for (int j = 0; j < dim_; ++j) {
    Eigen::VectorXd ws(w.size());
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      ws[i] = w[order_[j][static_cast<std::size_t>(i)]];
    }
    acc += detail::quantile_term_value(marginals_[j], atoms_sorted_[j], ws);
  }
  return acc;
}

double AndrewWeightModel::value_grad(const Eigen::VectorXd& w,
                                     Eigen::VectorXd& grad) const {
  Eigen::VectorXd g_ot;
  double acc = ot_value(w, &g_ot) + trace_term_;
  grad = g_ot;
  for (int j = 0; j < dim_; ++j) {
    Eigen::VectorXd ws(w.size());
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      ws[i] = w[order_[j][static_cast<std::size_t>(i)]];
    }
    double val = 0.0;
    Eigen::VectorXd gs;
    detail::quantile_term_value_grad(marginals_[j], atoms_sorted_[j], ws, val, gs);
    acc += val;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      grad[order_[j][static_cast<std::size_t>(i)]] += gs[i];
    }
  }
  return acc;
}

// ---------------------------------------------------------------------------
// DiscreteGapModel

DiscreteGapModel::DiscreteGapModel(const Eigen::VectorXd& ref_atoms,
                                   const Eigen::VectorXd& ref_weights,
                                   const Eigen::VectorXd& atoms,
                                   const MetricParams& params)
    : ref_atoms_(ref_atoms), ref_weights_(ref_weights), atoms_(atoms),
      params_(params) {
  check_simplex(ref_weights_, "discrete gap reference");
  std::vector<int> rorder(ref_atoms_.size());
  std::iota(rorder.begin(), rorder.end(), 0);
  std::sort(rorder.begin(), rorder.end(),
            [&](int a, int b) { return ref_atoms_[a] < ref_atoms_[b]; });
  ref_sorted_atoms_.resize(ref_atoms_.size());
  ref_sorted_cum_.resize(ref_atoms_.size());
  double cum = 0.0;
  for (Eigen::Index i = 0; i < ref_atoms_.size(); ++i) {
    ref_sorted_atoms_[i] = ref_atoms_[rorder[static_cast<std::size_t>(i)]];
    cum += ref_weights_[rorder[static_cast<std::size_t>(i)]];
    ref_sorted_cum_[i] = cum;
  }
  ref_sorted_cum_[ref_atoms_.size() - 1] = 1.0;

  order_.resize(atoms_.size());
  std::iota(order_.begin(), order_.end(), 0);
  std::sort(order_.begin(), order_.end(),
            [&](int a, int b) { return atoms_[a] < atoms_[b]; });
  atoms_sorted_.resize(atoms_.size());
  for (Eigen::Index i = 0; i < atoms_.size(); ++i) {
    atoms_sorted_[i] = atoms_[order_[static_cast<std::size_t>(i)]];
  }

  cost_.resize(ref_atoms_.size(), atoms_.size());
  for (Eigen::Index k = 0; k < ref_atoms_.size(); ++k) {
    for (Eigen::Index l = 0; l < atoms_.size(); ++l) {
      const double d = ref_atoms_[k] - atoms_[l];
      cost_(k, l) = d * d;
    }
  }
}

double DiscreteGapModel::quantile_part(const Eigen::VectorXd& w,
                                       Eigen::VectorXd* grad) const {
  const Eigen::Index n = atoms_.size();
  Eigen::VectorXd ws(n);
  for (Eigen::Index i = 0; i < n; ++i) ws[i] = w[order_[static_cast<std::size_t>(i)]];

  // Merged sweep over the two step quantile functions.
  double acc = 0.0;
  Eigen::Index ir = 0, im = 0;
  double cm = ws[0];
  double z = 0.0;
  while (true) {
    const double zr = ref_sorted_cum_[ir];
    const double zm = (im + 1 == n) ? 1.0 : cm;
    const double znext = std::min(std::min(zr, zm), 1.0);
    const double d = ref_sorted_atoms_[ir] - atoms_sorted_[im];
    acc += (znext - z) * d * d;
    z = znext;
    if (z >= 1.0 - 1e-15) break;
    if (zr <= znext + 1e-15 && ir + 1 < ref_sorted_atoms_.size()) ++ir;
    if (zm <= znext + 1e-15 && im + 1 < n) cm += ws[++im];
  }

  if (grad) {
    // Reference quantile at cumulative positions of the moving measure.
    Eigen::VectorXd gs = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd dt(n > 1 ? n - 1 : 0);
    double cum = 0.0;
    for (Eigen::Index k = 0; k + 1 < n; ++k) {
      cum += ws[k];
      const double* begin = ref_sorted_cum_.data();
      const double* end = begin + ref_sorted_cum_.size();
      const double* it = std::lower_bound(begin, end, cum);
      if (it == end) --it;
      const double qr = ref_sorted_atoms_[static_cast<Eigen::Index>(it - begin)];
      const double d0 = qr - atoms_sorted_[k];
      const double d1 = qr - atoms_sorted_[k + 1];
      dt[k] = d0 * d0 - d1 * d1;
    }
    double suffix = 0.0;
    for (Eigen::Index i = n - 1; i >= 0; --i) {
      gs[i] = suffix;
      if (i > 0) suffix += dt[i - 1];
    }
    grad->setZero(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      (*grad)[order_[static_cast<std::size_t>(i)]] = gs[i];
    }
  }
  return acc;
}

double DiscreteGapModel::value(const Eigen::VectorXd& w) const {
  const double ot = detail::sinkhorn_value_colgrad(
      cost_, ref_weights_, w, params_.lambda_alpha, params_.sinkhorn_tol,
      params_.sinkhorn_max_iter, &warm_, nullptr);
  return ot + quantile_part(w, nullptr);
}

double DiscreteGapModel::value_grad(const Eigen::VectorXd& w,
                                    Eigen::VectorXd& grad) const {
  Eigen::VectorXd g_ot;
  const double ot = detail::sinkhorn_value_colgrad(
      cost_, ref_weights_, w, params_.lambda_alpha, params_.sinkhorn_tol,
      params_.sinkhorn_max_iter, &warm_, &g_ot);
  Eigen::VectorXd g_q;
  const double qv = quantile_part(w, &g_q);
  grad = g_ot + g_q;
  return ot + qv;
}

AndrewBreakdown DiscreteGapModel::breakdown(const Eigen::VectorXd& w) const {
  AndrewBreakdown b;
  detail::SinkhornPotentials scratch;
  b.ot_term = detail::sinkhorn_value_colgrad(
      cost_, ref_weights_, w, params_.lambda_alpha, params_.sinkhorn_tol,
      params_.sinkhorn_max_iter, &scratch, nullptr);
  b.trace_term = 0.0;
  b.marginal_term = quantile_part(w, nullptr);
  return b;
}

}  // namespace dbetel
