#pragma once

#include <Eigen/Core>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

// Elliptical mixtures, weighted empirical measures, entropic optimal
// transport and the augmented/restricted transport distance built from
// them. Everything here is a pure function of its inputs; values are
// immutable after construction and safe to share across threads.

namespace dbetel {

enum class Generator { Gaussian, StudentT };

struct MixtureComponent {
  double weight;
  Eigen::VectorXd mean;
  Eigen::MatrixXd scale;  // PSD; zero scale gives a Dirac component
};

class EllipticalMixture {
 public:
  EllipticalMixture(std::vector<MixtureComponent> components,
                    Generator generator = Generator::Gaussian,
                    double student_df = 0.0);

  static EllipticalMixture single_gaussian(const Eigen::VectorXd& mean,
                                           const Eigen::MatrixXd& scale);

  int dim() const { return dim_; }
  int size() const { return static_cast<int>(components_.size()); }
  Generator generator() const { return generator_; }
  double student_df() const { return student_df_; }
  /// Variance multiplier: Var = nu_h * scale. 1 for Gaussian, df/(df-2) for
  /// Student-t. Fixed at construction.
  double nu_h() const { return nu_h_; }
  const std::vector<MixtureComponent>& components() const { return components_; }

  Eigen::VectorXd weights() const;

  /// Mixture density; requires all component scales nonsingular.
  double log_pdf(const Eigen::VectorXd& x) const;

  /// CDF of the coordinate-j marginal (mixture of univariate ellipticals).
  double marginal_cdf(int j, double x) const;

  /// Density of the coordinate-j marginal; Dirac components contribute 0.
  double marginal_pdf(int j, double x) const;

  /// Quantile of the coordinate-j marginal by bisection on marginal_cdf,
  /// bracket [min m - 12 max s, max m + 12 max s] expanded on failure.
  double marginal_quantile(int j, double z) const;

 private:
  std::vector<MixtureComponent> components_;
  Generator generator_;
  double student_df_;
  double nu_h_;
  int dim_;
};

/// nu_{w,x} = sum_i w_i delta_{x_i}.
class WeightedDiscrete {
 public:
  WeightedDiscrete(Eigen::MatrixXd points, Eigen::VectorXd weights);

  static WeightedDiscrete uniform(Eigen::MatrixXd points);

  int size() const { return static_cast<int>(weights_.size()); }
  int dim() const { return static_cast<int>(points_.cols()); }
  const Eigen::MatrixXd& points() const { return points_; }
  const Eigen::VectorXd& weights() const { return weights_; }

  WeightedDiscrete marginal(int j) const;

 private:
  Eigen::MatrixXd points_;
  Eigen::VectorXd weights_;
};

struct TransportResult {
  Eigen::MatrixXd plan;
  double cost = 0.0;             // <plan, M>
  double regularized_cost = 0.0; // <plan, M> - H(plan)/lambda_alpha
  int iterations = 0;
  bool converged = false;
  double marginal_error = 0.0;
};

struct SinkhornOptions {
  double tol = 1e-10;
  int max_iter = 20000;
  enum class Mode { Auto, Plain, Log } mode = Mode::Auto;
};

/// Entropic optimal transport between discrete marginals s0 and s1 for the
/// given cost matrix, regularization strength lambda_alpha (penalty
/// -H(plan)/lambda_alpha). Alternating scaling fixed point; switches to
/// log-sum-exp updates when any cost * lambda_alpha exceeds 30.
TransportResult sinkhorn(const Eigen::MatrixXd& cost, const Eigen::VectorXd& s0,
                         const Eigen::VectorXd& s1, double lambda_alpha,
                         const SinkhornOptions& opts = {});

/// Squared 2-Wasserstein distance between 1-D discrete measures, exact via
/// the merged breakpoints of the two piecewise-constant quantile functions.
double w2_1d_discrete(const WeightedDiscrete& a, const WeightedDiscrete& b);

/// Squared quantile distance between the coordinate-j marginal of a mixture
/// and a 1-D discrete measure; midpoint rule on (0,1) with quad_points
/// nodes, mixture quantiles by bisection to 1e-10.
double w2_1d_mixture_vs_discrete(const EllipticalMixture& p, int j,
                                 const WeightedDiscrete& q, int quad_points);

struct AndrewBreakdown {
  double ot_term = 0.0;
  double trace_term = 0.0;
  double marginal_term = 0.0;
  double total() const { return ot_term + trace_term + marginal_term; }
};

struct AndrewResult {
  double value = 0.0;
  AndrewBreakdown terms;
  TransportResult transport;
};

/// W_AR^2(p0, p1): entropic OT over the mixture weights on the quadratic
/// mean cost, plus nu_h * sum s_k tr(Sigma_k), plus the per-coordinate 1-D
/// quantile terms.
AndrewResult andrew(const EllipticalMixture& p0, const WeightedDiscrete& p1,
                    double lambda_alpha, int quad_points = 8192);

/// The restriction-only distance: OT term + trace term, no marginal
/// augmentation. Depends on first and second moments only.
double mw2(const EllipticalMixture& p0, const WeightedDiscrete& p1,
           double lambda_alpha);

struct MetricParams {
  double lambda_alpha = 1.0;
  int quad_points = 128;
  double sinkhorn_tol = 1e-10;
  int sinkhorn_max_iter = 20000;
};

namespace detail {

/// Piecewise-linear quantile representation on a fixed z-grid with exact
/// integrals of q and q^2. The grid mixes geometric tails (down to ~1e-12)
/// with a uniform core so breakpoint lookups stay accurate for very small
/// weights.
class PwlQuantileTable {
 public:
  static const Eigen::VectorXd& grid();
  static PwlQuantileTable from_quantile_fn(const std::function<double(double)>& q);
  static const PwlQuantileTable& std_normal();
  static const PwlQuantileTable& std_student_t(double df);

  double quantile(double z) const;
  double g1(double z) const;  // int_0^z q
  double g2(double z) const;  // int_0^z q^2

 private:
  Eigen::VectorXd q_, cg1_, cg2_;
};

/// Coordinate marginal quantile of a centering mixture, either an affine
/// view over a cached standard table (single component) or an owned table
/// (proper mixtures, built by warm-started bisection).
class MarginalQuantile {
 public:
  static MarginalQuantile affine(const PwlQuantileTable& base, double shift,
                                 double scale);
  static MarginalQuantile from_mixture(const EllipticalMixture& mix, int j);

  double quantile(double z) const;
  double g1(double z) const;
  double g2(double z) const;

 private:
  const PwlQuantileTable* base_ = nullptr;
  std::shared_ptr<PwlQuantileTable> owned_;
  double shift_ = 0.0;
  double scale_ = 1.0;
};

/// Exact squared quantile distance between a continuous marginal (PWL
/// representation) and a weighted empirical measure, plus its gradient in
/// the weights. atoms_sorted/order describe the fixed coordinate sort.
double quantile_term_value(const MarginalQuantile& mq,
                           const Eigen::VectorXd& atoms_sorted,
                           const Eigen::VectorXd& w_sorted);
void quantile_term_value_grad(const MarginalQuantile& mq,
                              const Eigen::VectorXd& atoms_sorted,
                              const Eigen::VectorXd& w_sorted, double& value,
                              Eigen::VectorXd& grad_sorted);

struct SinkhornPotentials {
  Eigen::VectorXd f, g;
  bool valid = false;
};

/// Log-domain Sinkhorn that reuses warm potentials; returns value of
/// <P,M> - H(P)/lambda_alpha and the gradient of that value with respect to
/// the column marginal (the column potential, up to an additive constant).
double sinkhorn_value_colgrad(const Eigen::MatrixXd& cost,
                              const Eigen::VectorXd& s0,
                              const Eigen::VectorXd& s1, double lambda_alpha,
                              double tol, int max_iter,
                              SinkhornPotentials* warm,
                              Eigen::VectorXd* grad_s1);

}  // namespace detail

/// Reporting/optimization interface: squared distance between a fixed
/// reference and a reweighted empirical measure as a function of the
/// simplex weights.
class WeightDistanceModel {
 public:
  virtual ~WeightDistanceModel() = default;
  virtual int size() const = 0;
  virtual double value(const Eigen::VectorXd& w) const = 0;
  virtual double value_grad(const Eigen::VectorXd& w,
                            Eigen::VectorXd& grad) const = 0;
};

/// W_AR^2(F_theta, nu_{w,x}) as a function of w. Structures that do not
/// depend on w (cost matrix, coordinate sorts, quantile tables) are fixed
/// at construction; per-call state (warm Sinkhorn potentials) lives in the
/// object, so share one instance per solver worker only.
class AndrewWeightModel final : public WeightDistanceModel {
 public:
  AndrewWeightModel(const EllipticalMixture& mixture,
                    const Eigen::MatrixXd& points, const MetricParams& params);

  int size() const override { return static_cast<int>(points_rows_); }
  double value(const Eigen::VectorXd& w) const override;
  double value_grad(const Eigen::VectorXd& w,
                    Eigen::VectorXd& grad) const override;

  double trace_term() const { return trace_term_; }

 private:
  double ot_value(const Eigen::VectorXd& w, Eigen::VectorXd* grad) const;

  Eigen::Index points_rows_;
  int dim_;
  MetricParams params_;
  double trace_term_;
  Eigen::VectorXd s0_;
  Eigen::MatrixXd cost_;                 // K0 x n
  std::vector<detail::MarginalQuantile> marginals_;
  std::vector<std::vector<int>> order_;  // per-coordinate atom sort
  std::vector<Eigen::VectorXd> atoms_sorted_;
  mutable detail::SinkhornPotentials warm_;
};

/// W_AR^2 between two 1-D discrete measures (fixed reference atoms with
/// fixed weights vs. moving weights on fixed atoms): Sinkhorn on the atom
/// cost plus the discrete quantile term, each side a zero-scale mixture.
class DiscreteGapModel final : public WeightDistanceModel {
 public:
  DiscreteGapModel(const Eigen::VectorXd& ref_atoms,
                   const Eigen::VectorXd& ref_weights,
                   const Eigen::VectorXd& atoms, const MetricParams& params);

  int size() const override { return static_cast<int>(atoms_.size()); }
  double value(const Eigen::VectorXd& w) const override;
  double value_grad(const Eigen::VectorXd& w,
                    Eigen::VectorXd& grad) const override;

  AndrewBreakdown breakdown(const Eigen::VectorXd& w) const;

 private:
  double quantile_part(const Eigen::VectorXd& w, Eigen::VectorXd* grad) const;

  Eigen::VectorXd ref_atoms_, ref_weights_, atoms_;
  Eigen::VectorXd ref_sorted_atoms_, ref_sorted_cum_;
  std::vector<int> order_;
  Eigen::VectorXd atoms_sorted_;
  MetricParams params_;
  Eigen::MatrixXd cost_;
  mutable detail::SinkhornPotentials warm_;
};

}  // namespace dbetel
