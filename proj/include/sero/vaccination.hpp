#pragma once

// Effectively vaccinated counts and the vaccination-derived seroprevalence.

#include <algorithm>
#include <cstdint>
#include <span>
#include <vector>

#include "sero/catalog.hpp"
#include "sero/corpus.hpp"
#include "sero/rng.hpp"
#include "sero/stats.hpp"

namespace sero {

/// People with at least one dose who have not completed the schedule,
/// counted as (2/d)(X - dY). May be negative for inconsistent inputs.
inline double partial_basis(std::int64_t x, std::int64_t y, int doses) {
  return 2.0 / doses * static_cast<double>(x - static_cast<std::int64_t>(doses) * y);
}

struct EffectiveCounters {
  std::size_t negative_partial = 0;
  std::size_t rounded_partial = 0;
};

struct EffectiveVaccinationDraw {
  std::int64_t m = 0;
  std::vector<std::int64_t> full;     // per vaccine
  std::vector<std::int64_t> partial;  // per vaccine
};

/// One draw of the effectively vaccinated count at a report, given per-vaccine
/// cumulative doses x, fully vaccinated y, and efficacy draws.
template <class Rng>
EffectiveVaccinationDraw sample_effective_count(std::span<const std::int64_t> x, std::span<const std::int64_t> y,
                                                std::span<const double> e_full, std::span<const double> e_partial,
                                                const Catalog& catalog, Rng& rng,
                                                EffectiveCounters* counters = nullptr) {
  EffectiveVaccinationDraw out;
  out.full.assign(x.size(), 0);
  out.partial.assign(x.size(), 0);
  for (std::size_t k = 0; k < x.size(); ++k) {
    const int d = catalog.doses(k);
    const double basis = partial_basis(x[k], y[k], d);
    std::int64_t n_partial = 0;
    if (basis < 0.0) {
      if (counters) ++counters->negative_partial;
    } else {
      n_partial = stats::round_half_even(basis);
      if (counters && static_cast<double>(n_partial) != basis) ++counters->rounded_partial;
    }
    out.full[k] = binomial(rng, std::max<std::int64_t>(y[k], 0), e_full[k]);
    out.partial[k] = binomial(rng, n_partial, e_partial[k]);
    out.m += out.full[k] + out.partial[k];
  }
  return out;
}

/// Index of the most recent report at or before day t, if any.
inline std::optional<std::size_t> latest_report(std::span<const Day> dates, Day t) {
  auto it = std::upper_bound(dates.begin(), dates.end(), t);
  if (it == dates.begin()) return std::nullopt;
  return static_cast<std::size_t>(it - dates.begin()) - 1;
}

/// Vaccination seroprevalence at day t from per-report effective counts m.
inline double theta_v(std::span<const Day> dates, std::span<const std::int64_t> m, double population, Day t) {
  auto j = latest_report(dates, t);
  if (!j) return 0.0;
  return std::clamp(static_cast<double>(m[*j]) / population, 0.0, 1.0);
}

}  // namespace sero
