#pragma once

// Scalar densities, tail probabilities and small numeric helpers shared by
// every model. All log-densities return -infinity outside their support.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include <boost/math/special_functions/erf.hpp>

#include "sero/error.hpp"
#include "sero/rng.hpp"

namespace sero::stats {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;

inline double log_choose(std::int64_t n, std::int64_t k) {
  return std::lgamma(static_cast<double>(n) + 1.0) - std::lgamma(static_cast<double>(k) + 1.0) -
         std::lgamma(static_cast<double>(n - k) + 1.0);
}

inline double xlogy(double x, double y) { return x == 0.0 ? 0.0 : x * std::log(y); }

inline double log_binomial_pmf(std::int64_t k, std::int64_t n, double p) {
  if (k < 0 || k > n || p < 0.0 || p > 1.0) return kNegInf;
  const double kd = static_cast<double>(k), nk = static_cast<double>(n - k);
  if ((p == 0.0 && k > 0) || (p == 1.0 && k < n)) return kNegInf;
  return log_choose(n, k) + xlogy(kd, p) + xlogy(nk, 1.0 - p);
}

inline double log_poisson_pmf(std::int64_t k, double mean) {
  if (k < 0 || mean < 0.0) return kNegInf;
  if (mean == 0.0) return k == 0 ? 0.0 : kNegInf;
  const double kd = static_cast<double>(k);
  return kd * std::log(mean) - mean - std::lgamma(kd + 1.0);
}

inline double log_beta_fn(double a, double b) { return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b); }

inline double log_beta_pdf(double x, double a, double b) {
  if (x <= 0.0 || x >= 1.0) return kNegInf;
  return (a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x) - log_beta_fn(a, b);
}

inline double log_gamma_pdf(double x, double shape, double rate) {
  if (x <= 0.0) return kNegInf;
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) - rate * x;
}

inline double log_normal_pdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -0.5 * z * z - std::log(sd) - kLogSqrt2Pi;
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

/// log of the upper tail Q(z) = 1 - Phi(z), accurate far into the tail.
inline double log_normal_upper(double z) {
  if (z < 30.0) return std::log(0.5 * std::erfc(z / std::sqrt(2.0)));
  // Asymptotic series: Q(z) ~ phi(z)/z * (1 - 1/z^2 + 3/z^4 - 15/z^6).
  const double z2 = z * z;
  const double series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2);
  return -0.5 * z2 - std::log(z) - kLogSqrt2Pi + std::log(series);
}

/// log(Phi(hi) - Phi(lo)) for lo < hi, stable in both tails.
inline double log_normal_interval_mass(double lo, double hi) {
  if (!(lo < hi)) return kNegInf;
  if (lo > 0.0) {
    // Both in the upper half: Q(lo) - Q(hi).
    const double a = log_normal_upper(lo);
    const double b = log_normal_upper(hi);
    return a + std::log1p(-std::exp(b - a));
  }
  if (hi < 0.0) return log_normal_interval_mass(-hi, -lo);
  // lo <= 0 <= hi: both excluded tails are at most one half.
  return std::log1p(-(normal_cdf(lo) + 0.5 * std::erfc(hi / std::sqrt(2.0))));
}

/// Truncated-normal log density on (lo, hi).
inline double truncated_normal_logpdf(double x, double mean, double sd, double lo, double hi) {
  if (!(x > lo && x < hi)) return kNegInf;
  return log_normal_pdf(x, mean, sd) - log_normal_interval_mass((lo - mean) / sd, (hi - mean) / sd);
}

/// Inverse of the standard normal upper tail: returns z with Q(z) = q.
inline double normal_upper_quantile(double q) { return std::sqrt(2.0) * boost::math::erfc_inv(2.0 * q); }

/// Standard normal restricted to (lo, hi). Inverse CDF in the interior,
/// exponential-proposal rejection when the window sits far in a tail.
template <class Rng>
double truncated_standard_normal(Rng& rng, double lo, double hi) {
  if (hi < -8.0) return -truncated_standard_normal(rng, -hi, -lo);
  if (lo > 8.0) {
    const double rate = 0.5 * (lo + std::sqrt(lo * lo + 4.0));
    for (;;) {
      const double z = lo - std::log(rng.uniform()) / rate;
      if (z >= hi) continue;
      if (std::log(rng.uniform()) <= -0.5 * (z - rate) * (z - rate)) return z;
    }
  }
  const double u = rng.uniform();
  if (lo > 0.0) {
    const double qlo = 0.5 * std::erfc(lo / std::sqrt(2.0));
    const double qhi = std::isfinite(hi) ? 0.5 * std::erfc(hi / std::sqrt(2.0)) : 0.0;
    const double q = qlo - u * (qlo - qhi);
    return std::clamp(normal_upper_quantile(q), lo, hi);
  }
  // Work through the lower tail Phi(x) = Q(-x).
  const double plo = std::isfinite(lo) ? 0.5 * std::erfc(-lo / std::sqrt(2.0)) : 0.0;
  const double phi = std::isfinite(hi) ? 0.5 * std::erfc(-hi / std::sqrt(2.0)) : 1.0;
  const double p = plo + u * (phi - plo);
  if (p < 0.5) return std::clamp(-normal_upper_quantile(p), lo, hi);
  return std::clamp(normal_upper_quantile(1.0 - p), lo, hi);
}

template <class Rng>
double truncated_normal(Rng& rng, double mean, double sd, double lo, double hi) {
  const double z = truncated_standard_normal(rng, (lo - mean) / sd, (hi - mean) / sd);
  return std::clamp(mean + sd * z, lo, hi);
}

inline double logistic(double u) {
  return u >= 0.0 ? 1.0 / (1.0 + std::exp(-u)) : std::exp(u) / (1.0 + std::exp(u));
}
inline double logit(double x) { return std::log(x) - std::log1p(-x); }

/// log(1 + exp(u)) without overflow.
inline double log1p_exp(double u) { return u > 0.0 ? u + std::log1p(std::exp(-u)) : std::log1p(std::exp(u)); }

inline double log_sum_exp(std::span<const double> xs) {
  double hi = kNegInf;
  for (double x : xs) hi = std::max(hi, x);
  if (!std::isfinite(hi)) return hi;
  double acc = 0.0;
  for (double x : xs) acc += std::exp(x - hi);
  return hi + std::log(acc);
}

/// Round to nearest integer, ties to even.
inline std::int64_t round_half_even(double x) {
  const double fl = std::floor(x);
  const double frac = x - fl;
  auto base = static_cast<std::int64_t>(fl);
  if (frac > 0.5) return base + 1;
  if (frac < 0.5) return base;
  return (base % 2 == 0) ? base : base + 1;
}

inline double mean(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

/// Sample variance with n-1 denominator.
inline double variance(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean(xs);
  double acc = 0.0;
  for (double x : xs) acc += (x - m) * (x - m);
  return acc / static_cast<double>(xs.size() - 1);
}

/// Linear-interpolation quantile of an already sorted sample.
inline double quantile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw Error(ErrorCode::InsufficientDraws, "quantile of empty sample");
  const double h = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

struct Summary {
  double mean = 0.0;
  double lo = 0.0;  // 2.5%
  double hi = 0.0;  // 97.5%
};

inline Summary summarize(std::span<const double> xs) {
  std::vector<double> sorted(xs.begin(), xs.end());
  std::sort(sorted.begin(), sorted.end());
  Summary s{mean(xs), quantile_sorted(sorted, 0.025), quantile_sorted(sorted, 0.975)};
  // Summation round-off on a (near) constant sample can put the mean an ulp outside.
  const double slack = 1e-12 * std::max(1.0, std::abs(s.mean));
  if (s.mean < s.lo && s.lo - s.mean < slack) s.mean = s.lo;
  if (s.mean > s.hi && s.mean - s.hi < slack) s.mean = s.hi;
  return s;
}

}  // namespace sero::stats
