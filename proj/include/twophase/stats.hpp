#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "twophase/common.hpp"

namespace twophase {

// Pairwise (cascade) summation. Deterministic for a given input order and
// accurate to O(eps * log n) relative error.
inline double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 32) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t half = v.size() / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

inline double pairwise_sum(const std::vector<double>& v) {
  return pairwise_sum(std::span<const double>(v));
}

// Sort by magnitude (ties broken by value) before the pairwise pass. Used
// where 1e-12 absolute tolerances are asserted on sums of many small masses.
inline double sorted_pairwise_sum(std::vector<double> v) {
  std::sort(v.begin(), v.end(), [](double a, double b) {
    const double aa = std::abs(a), ab = std::abs(b);
    return aa != ab ? aa < ab : a < b;
  });
  return pairwise_sum(std::span<const double>(v));
}

inline double normal_pdf(double x) {
  static const double inv_sqrt_2pi = 0.3989422804014326779;
  return inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

inline double normal_cdf(double x) {
  return 0.5 * std::erfc(-x * 0.70710678118654752440);
}

// Inverse standard normal CDF, Wichura's PPND16 rational approximation.
// Absolute accuracy around 1e-15 on (0, 1).
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("normal_quantile: p must be in (0,1)");
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
  double r = q < 0.0 ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double x;
  if (r <= 5.0) {
    r -= 1.6;
    x = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
              2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r +
            3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r +
          4.63033784615654529590e0) * r + 1.42343711074968357734e0) /
        (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
              1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
            6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r +
          2.05319162663775882187e0) * r + 1.0);
  } else {
    r -= 5.0;
    x = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
              1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
            2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r +
          5.46378491116411436990e0) * r + 6.65790464350110377720e0) /
        (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
              1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
            1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
          5.99832206555887937690e-1) * r + 1.0);
  }
  return q < 0.0 ? -x : x;
}

// Asymptotic one-sample KS / DKW band: sup|F_hat - F| exceeds
// sqrt(ln(2/alpha)/(2R)) with probability at most alpha. The 1% constant is
// the familiar 1.628/sqrt(R).
inline double ks_band(std::size_t r, double alpha) {
  if (r == 0 || !(alpha > 0.0 && alpha < 1.0)) throw std::domain_error("ks_band: bad arguments");
  return std::sqrt(std::log(2.0 / alpha) / (2.0 * static_cast<double>(r)));
}

// One-sample KS distance between the empirical CDF of `sample` and a
// continuous CDF.
inline double ks_distance(std::vector<double> sample, const std::function<double(double)>& cdf) {
  if (sample.empty()) throw std::invalid_argument("ks_distance: empty sample");
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double f = cdf(sample[i]);
    d = std::max(d, (static_cast<double>(i) + 1.0) / n - f);
    d = std::max(d, f - static_cast<double>(i) / n);
  }
  return d;
}

inline double ks_distance_normal(const std::vector<double>& sample) {
  return ks_distance(sample, [](double x) { return normal_cdf(x); });
}

// Mean / unbiased variance plus Monte Carlo standard errors for both.
struct SampleStats {
  std::size_t n = 0;
  double mean = 0.0;
  double variance = 0.0;   // unbiased
  double m4 = 0.0;         // fourth central moment
  double se_mean = 0.0;
  double se_variance = 0.0;

  static SampleStats from(std::span<const double> v) {
    SampleStats s;
    s.n = v.size();
    if (s.n == 0) throw std::invalid_argument("SampleStats: empty sample");
    s.mean = pairwise_sum(v) / static_cast<double>(s.n);
    std::vector<double> c2(s.n), c4(s.n);
    for (std::size_t i = 0; i < s.n; ++i) {
      const double d = v[i] - s.mean;
      c2[i] = d * d;
      c4[i] = d * d * d * d;
    }
    const double nn = static_cast<double>(s.n);
    const double m2 = pairwise_sum(c2) / nn;
    s.m4 = pairwise_sum(c4) / nn;
    s.variance = s.n > 1 ? m2 * nn / (nn - 1.0) : 0.0;
    s.se_mean = std::sqrt(std::max(0.0, s.variance) / nn);
    s.se_variance = std::sqrt(std::max(0.0, s.m4 - m2 * m2) / nn);
    return s;
  }

  static SampleStats from(const std::vector<double>& v) {
    return from(std::span<const double>(v));
  }
};

inline double correlation(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("correlation: bad inputs");
  const double ma = pairwise_sum(a) / static_cast<double>(a.size());
  const double mb = pairwise_sum(b) / static_cast<double>(b.size());
  std::vector<double> ab(a.size()), aa(a.size()), bb(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab[i] = (a[i] - ma) * (b[i] - mb);
    aa[i] = (a[i] - ma) * (a[i] - ma);
    bb[i] = (b[i] - mb) * (b[i] - mb);
  }
  const double denom = std::sqrt(pairwise_sum(aa) * pairwise_sum(bb));
  if (denom == 0.0) return 0.0;
  return pairwise_sum(ab) / denom;
}

// Linear-interpolation sample quantile on a sorted vector.
inline double empirical_quantile(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) throw std::invalid_argument("empirical_quantile: empty");
  if (p <= 0.0) return sorted.front();
  if (p >= 1.0) return sorted.back();
  const double h = p * (static_cast<double>(sorted.size()) - 1.0);
  const std::size_t lo = static_cast<std::size_t>(h);
  const double frac = h - static_cast<double>(lo);
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac;
}

// Adaptive Simpson quadrature; used for absolute moments of continuous
// families where no closed form is implemented.
namespace detail {
inline double simpson_step(const std::function<double(double)>& f, double a, double m, double b,
                           double fa, double fm, double fb, double whole, double tol, int depth) {
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  if (depth <= 0 || std::abs(left + right - whole) <= 15.0 * tol) {
    return left + right + (left + right - whole) / 15.0;
  }
  return simpson_step(f, a, lm, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         simpson_step(f, m, rm, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}
}  // namespace detail

inline double integrate(const std::function<double(double)>& f, double a, double b,
                        double tol = 1e-12, int max_depth = 40) {
  const double m = 0.5 * (a + b);
  const double fa = f(a), fm = f(m), fb = f(b);
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return detail::simpson_step(f, a, m, b, fa, fm, fb, whole, tol, max_depth);
}

}  // namespace twophase
