#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>
#include <span>
#include <vector>

namespace sero {

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Counter-keyed generator: the stream is a pure function of (seed, counters),
/// so e.g. (seed, chain, iteration, block) yields the same variates no matter
/// which thread runs the chain or in what order.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t seed, std::initializer_list<std::uint64_t> counters = {}) noexcept
      : state_(mix64(seed ^ 0x6a09e667f3bcc909ULL)) {
    std::uint64_t slot = 1;
    for (auto c : counters) {
      state_ = mix64(state_ ^ mix64(c + kGamma * slot));
      ++slot;
    }
  }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept {
    state_ += kGamma;
    return mix64(state_);
  }

  /// Uniform on the open interval (0, 1).
  double uniform() noexcept { return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53; }

  double normal() noexcept {
    // Box-Muller on fresh uniforms; no cached second value so streams stay stateless.
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

 private:
  static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;
  std::uint64_t state_;
};

template <class Rng>
std::int64_t binomial(Rng& rng, std::int64_t n, double p) {
  if (n <= 0 || p <= 0.0) return 0;
  if (p >= 1.0) return n;
  std::binomial_distribution<std::int64_t> dist(n, p);
  return dist(rng);
}

template <class Rng>
std::int64_t poisson(Rng& rng, double mean) {
  if (!(mean > 0.0)) return 0;
  std::poisson_distribution<std::int64_t> dist(mean);
  return dist(rng);
}

template <class Rng>
double gamma_variate(Rng& rng, double shape, double scale = 1.0) {
  std::gamma_distribution<double> dist(shape, scale);
  return dist(rng);
}

template <class Rng>
double beta_variate(Rng& rng, double a, double b) {
  // Keep draws strictly inside (0, 1) even when one gamma underflows.
  for (;;) {
    const double x = gamma_variate(rng, a);
    const double y = gamma_variate(rng, b);
    const double v = x / (x + y);
    if (v > 0.0 && v < 1.0) return v;
  }
}

/// Sequential-binomial multinomial draw; components always sum to `n`.
template <class Rng>
std::vector<std::int64_t> multinomial(Rng& rng, std::int64_t n, std::span<const double> probs) {
  std::vector<std::int64_t> out(probs.size(), 0);
  double remaining_mass = 0.0;
  for (double p : probs) remaining_mass += p;
  std::int64_t remaining = n;
  for (std::size_t k = 0; k < probs.size() && remaining > 0; ++k) {
    if (probs[k] <= 0.0) continue;
    const bool last = [&] {
      for (std::size_t m = k + 1; m < probs.size(); ++m)
        if (probs[m] > 0.0) return false;
      return true;
    }();
    if (last) {
      out[k] = remaining;
      remaining = 0;
      break;
    }
    const double p = std::min(1.0, probs[k] / remaining_mass);
    out[k] = binomial(rng, remaining, p);
    remaining -= out[k];
    remaining_mass -= probs[k];
  }
  return out;
}

}  // namespace sero
