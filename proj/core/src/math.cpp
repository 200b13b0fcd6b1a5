#include "dbetel/math.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>

#include "dbetel/errors.hpp"

namespace dbetel::math {

double norm_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * kPi);
}

double norm_cdf(double x) {
  return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

// Wichura (1988), algorithm AS241 PPND16.
double norm_quantile(double p) {
  if (p <= 0.0) return -std::numeric_limits<double>::infinity();
  if (p >= 1.0) return std::numeric_limits<double>::infinity();

  const double q = p - 0.5;
  if (std::abs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    return q *
           (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r +
                 6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r +
               1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r +
             1.3314166789178437745e2) * r + 3.3871328727963666080e0) /
           (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r +
                 3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r +
               5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r +
             4.2313330701600911252e1) * r + 1.0);
  }
  double r = (q < 0.0) ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double val;
  if (r <= 5.0) {
    r -= 1.6;
    val = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
                2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r +
              3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r +
            4.63033784615654529590e0) * r + 1.42343711074968357734e0) /
          (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
                1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
              6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r +
            2.05319162663775882187e0) * r + 1.0);
  } else {
    r -= 5.0;
    val = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
              2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r +
            5.46378491116411436990e0) * r + 6.65790464350110377720e0) /
          (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
                1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
              1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
            5.99832206555887937690e-1) * r + 1.0);
  }
  return (q < 0.0) ? -val : val;
}

double lbeta(double a, double b) {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

namespace {

// Continued fraction for the incomplete beta (Lentz's method).
double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-16;
  constexpr double kFpMin = 1e-300;

  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

double inc_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double lfront =
      a * std::log(x) + b * std::log1p(-x) - lbeta(a, b);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return std::exp(lfront) * betacf(a, b, x) / a;
  }
  return 1.0 - std::exp(lfront) * betacf(b, a, 1.0 - x) / b;
}

double student_t_pdf(double x, double nu) {
  const double lnorm =
      std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) -
      0.5 * std::log(nu * kPi);
  return std::exp(lnorm - 0.5 * (nu + 1.0) * std::log1p(x * x / nu));
}

double student_t_cdf(double x, double nu) {
  if (x == 0.0) return 0.5;
  const double z = nu / (nu + x * x);
  const double p = 0.5 * inc_beta(0.5 * nu, 0.5, z);
  return (x > 0.0) ? 1.0 - p : p;
}

double student_t_quantile(double p, double nu) {
  if (p <= 0.0) return -std::numeric_limits<double>::infinity();
  if (p >= 1.0) return std::numeric_limits<double>::infinity();
  if (p == 0.5) return 0.0;
  return invert_monotone([nu](double x) { return student_t_cdf(x, nu); }, p,
                         -2.0, 2.0, 1e-13);
}

namespace {

// 64-point Gauss-Legendre nodes/weights on [-1, 1] (symmetric halves).
struct Gl64 {
  std::array<double, 32> x{};
  std::array<double, 32> w{};
  Gl64() {
    // Newton iteration on Legendre P_64 roots.
    constexpr int n = 64;
    for (int i = 0; i < 32; ++i) {
      double z = std::cos(kPi * (i + 0.75) / (n + 0.5));
      double pp = 0.0;
      for (int it = 0; it < 100; ++it) {
        double p0 = 1.0, p1 = 0.0;
        for (int j = 0; j < n; ++j) {
          const double p2 = p1;
          p1 = p0;
          p0 = ((2.0 * j + 1.0) * z * p1 - j * p2) / (j + 1.0);
        }
        pp = n * (z * p0 - p1) / (z * z - 1.0);
        const double z1 = z;
        z = z1 - p0 / pp;
        if (std::abs(z - z1) < 1e-15) break;
      }
      x[i] = z;
      w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
    }
  }
};

const Gl64& gl64() {
  static const Gl64 table;
  return table;
}

// T(h, a) for 0 <= a <= 1 by direct quadrature of the defining integral.
double owens_t_core(double h, double a) {
  const auto& g = gl64();
  const double hh = -0.5 * h * h;
  const double half = 0.5 * a;
  double sum = 0.0;
  for (int i = 0; i < 32; ++i) {
    for (double sgn : {-1.0, 1.0}) {
      const double t = half + sgn * half * g.x[i];
      const double f = std::exp(hh * (1.0 + t * t)) / (1.0 + t * t);
      sum += g.w[i] * half * f;
    }
  }
  return sum / (2.0 * kPi);
}

}  // namespace

double owens_t(double h, double a) {
  if (a == 0.0 || std::isinf(h)) return 0.0;
  if (a < 0.0) return -owens_t(h, -a);
  h = std::abs(h);  // T(-h, a) = T(h, a)
  if (std::isinf(a)) return 0.5 * norm_cdf(-h);
  if (a <= 1.0) return owens_t_core(h, a);
  // Reduction identity for a > 1.
  const double ah = a * h;
  return 0.5 * (norm_cdf(h) + norm_cdf(ah)) - norm_cdf(h) * norm_cdf(ah) -
         owens_t_core(ah, 1.0 / a);
}

double skew_normal_pdf(double z, double loc, double scale, double slant) {
  const double u = (z - loc) / scale;
  return 2.0 / scale * norm_pdf(u) * norm_cdf(slant * u);
}

double skew_normal_cdf(double z, double loc, double scale, double slant) {
  const double u = (z - loc) / scale;
  return norm_cdf(u) - 2.0 * owens_t(u, slant);
}

double skew_normal_quantile(double p, double loc, double scale, double slant) {
  if (p <= 0.0) return -std::numeric_limits<double>::infinity();
  if (p >= 1.0) return std::numeric_limits<double>::infinity();
  const double q = invert_monotone(
      [slant](double u) { return skew_normal_cdf(u, 0.0, 1.0, slant); }, p,
      -8.0, 8.0, 1e-12);
  return loc + scale * q;
}

double lmvgamma(int d, double a) {
  double s = 0.25 * d * (d - 1) * std::log(kPi);
  for (int j = 1; j <= d; ++j) s += std::lgamma(a + 0.5 * (1 - j));
  return s;
}

double invert_monotone(const std::function<double(double)>& f, double target,
                       double lo, double hi, double tol, int max_expand) {
  double flo = f(lo) - target;
  double fhi = f(hi) - target;
  int expand = 0;
  while (flo * fhi > 0.0) {
    if (++expand > max_expand) {
      throw QuantileBracketFailure("invert_monotone: bracket did not enclose the target");
    }
    const double width = hi - lo;
    if (flo > 0.0) {
      lo -= width;
      flo = f(lo) - target;
    } else {
      hi += width;
      fhi = f(hi) - target;
    }
  }
  for (int it = 0; it < 200 && hi - lo > tol; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double fm = f(mid) - target;
    if (fm == 0.0) return mid;
    if (flo * fm < 0.0) {
      hi = mid;
    } else {
      lo = mid;
      flo = fm;
    }
  }
  return 0.5 * (lo + hi);
}

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

uint64_t derive_seed(uint64_t root, uint64_t a, uint64_t b, uint64_t c) {
  uint64_t s = splitmix64(root ^ 0x5851f42d4c957f2dULL);
  s = splitmix64(s ^ a);
  s = splitmix64(s ^ b);
  s = splitmix64(s ^ c);
  return s;
}

uint64_t fnv1a64(const std::string& bytes) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

double sample_variance(const Eigen::VectorXd& v) {
  const auto n = v.size();
  if (n < 2) return 0.0;
  const double mean = v.mean();
  return (v.array() - mean).square().sum() / static_cast<double>(n - 1);
}

double sample_skewness(const Eigen::VectorXd& v) {
  const auto n = static_cast<double>(v.size());
  const double mean = v.mean();
  const double m2 = (v.array() - mean).square().mean();
  const double m3 = (v.array() - mean).cube().mean();
  return m3 / std::pow(m2, 1.5) * std::sqrt(n * (n - 1.0)) / (n - 2.0);
}

}  // namespace dbetel::math
