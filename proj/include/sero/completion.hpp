#pragma once

// Fully-vaccinated counts: Poisson regression of twice the number of
// incompletely vaccinated people on recent dosing pace, and the per-vaccine
// split of the imputed totals.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "sero/allocation.hpp"
#include "sero/corpus.hpp"
#include "sero/error.hpp"
#include "sero/mcmc.hpp"
#include "sero/rng.hpp"
#include "sero/stats.hpp"

namespace sero {

inline constexpr int kDefaultDelta = 21;

/// Smallest earlier index whose date gap is closest to `delta`. `j` is zero-based.
inline std::size_t closest_report_index(std::span<const Day> dates, std::size_t j, int delta) {
  if (j == 0) throw Error(ErrorCode::NoEarlierReport, "the first report has no earlier report");
  if (j >= dates.size()) throw Error(ErrorCode::Internal, "report index out of range");
  std::size_t best = 0;
  long best_gap = std::numeric_limits<long>::max();
  for (std::size_t jp = 0; jp < j; ++jp) {
    const long gap = std::labs(static_cast<long>(dates[j]) - dates[jp] - delta);
    if (gap < best_gap) {
      best_gap = gap;
      best = jp;
    }
  }
  return best;
}

struct RecencyContext {
  std::optional<std::size_t> jstar;  // empty for a country's first report
  double z = 0.0;                    // doses per day over the window
  std::vector<double> wstar;
  double w2 = 0.0;
  double w3 = 0.0;
  double q[3] = {0.0, 0.0, 0.0};
  bool fallback_weights = false;

  bool pure_type1() const { return q[1] == 0.0 && q[2] == 0.0; }
};

/// Window weights normalized to sum to one, or std::nullopt if they are all zero.
inline std::optional<std::vector<double>> normalized(std::vector<double> v) {
  double total = 0.0;
  for (double x : v) total += x;
  if (!(total > 0.0)) return std::nullopt;
  for (double& x : v) x /= total;
  return v;
}

inline RecencyContext recency_context(const Corpus& corpus, const AllocationWeights& weights,
                                      const DeliveryShares& shares, std::size_t i, std::size_t j,
                                      int delta = kDefaultDelta) {
  const auto& country = corpus.countries.at(i);
  const auto& reports = country.reports;
  const auto dates = corpus.report_dates(i);
  const std::size_t n_vaccines = corpus.catalog.size();
  RecencyContext ctx;
  std::size_t first = j;
  if (j == 0) {
    // Doses in the first report were given since rollout, taken as that report's date.
    const double span = std::max<double>(dates[0] - dates.front(), 1.0);
    ctx.z = static_cast<double>(reports[0].cum_doses) / span;
  } else {
    const std::size_t js = closest_report_index(dates, j, delta);
    if (dates[j] == dates[js]) throw Error(ErrorCode::ZeroWindow, country.code + ": zero-length recency window");
    ctx.jstar = js;
    first = js;
    ctx.z = static_cast<double>(reports[j].cum_doses - reports[js].cum_doses) / static_cast<double>(dates[j] - dates[js]);
  }
  std::vector<double> window(n_vaccines, 0.0);
  for (std::size_t jp = first; jp <= j; ++jp)
    for (std::size_t k = 0; k < n_vaccines; ++k) window[k] += weights.dw[i][jp][k];
  auto wstar = normalized(window);
  if (!wstar) {
    std::vector<double> alt(n_vaccines, 0.0);
    for (std::size_t k = 0; k < n_vaccines; ++k)
      if (reports[j].uses(k)) alt[k] = shares.row(i)[k];
    wstar = normalized(alt);
    if (!wstar)
      throw Error(ErrorCode::DegenerateWeights,
                  country.code + " " + corpus.date_text(dates[j]) + ": no usable vaccine weight in the window");
    ctx.fallback_weights = true;
  }
  ctx.wstar = std::move(*wstar);
  double t2 = 0.0, t3 = 0.0;
  for (std::size_t k = 0; k < n_vaccines; ++k) {
    const int type = corpus.catalog.doses(k);
    ctx.q[type - 1] += ctx.wstar[k];
    if (type == 2) t2 += ctx.wstar[k] * corpus.catalog.interval(k);
    if (type == 3) t3 += ctx.wstar[k] * corpus.catalog.interval(k);
  }
  ctx.w2 = ctx.z * t2;
  ctx.w3 = ctx.z * t3;
  return ctx;
}

using ContextTable = std::vector<std::vector<RecencyContext>>;

inline ContextTable recency_contexts(const Corpus& corpus, const AllocationWeights& weights,
                                     const DeliveryShares& shares, int delta = kDefaultDelta) {
  ContextTable out(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i)
    for (std::size_t j = 0; j < corpus.countries[i].reports.size(); ++j)
      out[i].push_back(recency_context(corpus, weights, shares, i, j, delta));
  return out;
}

inline double completion_mean(double x, const RecencyContext& ctx, double beta0, double beta1) {
  double lambda = 0.0;
  if (ctx.q[1] > 0.0) {
    if (!(ctx.w2 > 0.0)) throw Error(ErrorCode::UndefinedLogArgument, "type-2 weight present but W2 = 0");
    lambda += ctx.q[1] * (x + std::exp(beta0 + beta1 * std::log(ctx.w2)));
  }
  if (ctx.q[2] > 0.0) {
    if (!(ctx.w3 > 0.0)) throw Error(ErrorCode::UndefinedLogArgument, "type-3 weight present but W3 = 0");
    lambda += ctx.q[2] * (4.0 / 3.0 * x + 2.0 / 3.0 * std::exp(beta0 + beta1 * std::log(ctx.w3)));
  }
  return lambda;
}

struct CompletionRow {
  ReportRef ref;
  std::int64_t x = 0;
  std::int64_t y = 0;
  RecencyContext ctx;
};

struct CompletionLoglik {
  double value = 0.0;
  std::vector<ReportRef> impossible;  // positive count under a zero mean
};

inline CompletionLoglik completion_loglik(const std::vector<CompletionRow>& rows, double beta0, double beta1) {
  CompletionLoglik out;
  for (const auto& row : rows) {
    const std::int64_t count = 2 * (row.x - row.y);
    const double lambda = completion_mean(static_cast<double>(row.x), row.ctx, beta0, beta1);
    const double lp = stats::log_poisson_pmf(count, lambda);
    if (lp == stats::kNegInf) out.impossible.push_back(row.ref);
    out.value += lp;
  }
  return out;
}

namespace detail {
inline std::pair<double, double> regressors(const RecencyContext& ctx) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  return {ctx.q[1] > 0.0 ? std::log(ctx.w2) : nan, ctx.q[2] > 0.0 ? std::log(ctx.w3) : nan};
}
inline bool same(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }
}  // namespace detail

/// Flat-prior propriety: at least two contributing rows with different log-pace regressors.
inline bool check_theorem2(const std::vector<CompletionRow>& rows) {
  std::optional<std::pair<double, double>> first;
  for (const auto& row : rows) {
    if (row.ctx.pure_type1()) continue;
    const auto x = detail::regressors(row.ctx);
    if (!first) {
      first = x;
    } else if (!detail::same(first->first, x.first) || !detail::same(first->second, x.second)) {
      return true;
    }
  }
  return false;
}

struct ImputeCounters {
  std::size_t draws = 0;
  std::size_t half_rounded = 0;  // odd Poisson draws
  std::size_t clamped = 0;       // X - D/2 fell below zero
  std::size_t zero_pace = 0;     // W = 0 with positive type weight; pace term taken at its limit 0
  std::size_t infeasible_split = 0;
  std::size_t lag_fallback = 0;
};

/// Mean used for imputation: as completion_mean, but a zero pace contributes
/// its limiting value (0 for beta1 > 0) instead of failing.
inline double imputation_mean(double x, const RecencyContext& ctx, double beta0, double beta1, ImputeCounters* counters) {
  double lambda = 0.0;
  auto pace = [&](double w) {
    if (w > 0.0) return std::exp(beta0 + beta1 * std::log(w));
    if (counters) ++counters->zero_pace;
    return beta1 > 0.0 ? 0.0 : (beta1 == 0.0 ? std::exp(beta0) : std::numeric_limits<double>::infinity());
  };
  if (ctx.q[1] > 0.0) lambda += ctx.q[1] * (x + pace(ctx.w2));
  if (ctx.q[2] > 0.0) lambda += ctx.q[2] * (4.0 / 3.0 * x + 2.0 / 3.0 * pace(ctx.w3));
  return lambda;
}

template <class Rng>
std::int64_t impute_fully(std::int64_t x, const RecencyContext& ctx, double beta0, double beta1, Rng& rng,
                          ImputeCounters* counters = nullptr) {
  const double lambda = imputation_mean(static_cast<double>(x), ctx, beta0, beta1, counters);
  if (!std::isfinite(lambda)) return 0;
  const std::int64_t d = poisson(rng, lambda);
  const auto half = static_cast<std::int64_t>(stats::round_half_even(static_cast<double>(d) / 2.0));
  if (counters) {
    ++counters->draws;
    counters->half_rounded += d % 2;
    counters->clamped += half > x;
  }
  return std::clamp<std::int64_t>(x - half, 0, x);
}

struct FullySplit {
  std::vector<std::int64_t> counts;
  bool infeasible = false;
  bool lag_fallback = false;
};

/// Per-vaccine fully vaccinated counts at report (i, j). `doses[j'][k]` is the
/// per-vaccine cumulative dose count at earlier reports of the same country.
template <class Rng>
FullySplit split_fully_by_vaccine(std::int64_t y, std::span<const std::vector<std::int64_t>> doses, std::size_t j,
                                  std::span<const Day> dates, const Catalog& catalog, Rng& rng) {
  const std::size_t n_vaccines = catalog.size();
  FullySplit out;
  out.counts.assign(n_vaccines, 0);
  std::int64_t type1 = 0;
  for (std::size_t k = 0; k < n_vaccines; ++k)
    if (catalog.doses(k) == 1) {
      out.counts[k] = doses[j][k];
      type1 += doses[j][k];
    }
  std::int64_t remaining = y - type1;
  if (remaining < 0) {
    out.infeasible = true;
    remaining = 0;
  }
  if (remaining == 0) return out;
  std::vector<double> lagged(n_vaccines, 0.0);
  double total = 0.0;
  for (std::size_t k = 0; k < n_vaccines; ++k) {
    if (catalog.doses(k) == 1) continue;
    const std::size_t js = j == 0 ? 0 : closest_report_index(dates, j, catalog.interval(k));
    lagged[k] = static_cast<double>(doses[js][k]);
    total += lagged[k];
  }
  if (j == 0 || !(total > 0.0)) {
    // No lagged signal: fall back to the current multi-dose counts.
    out.lag_fallback = true;
    total = 0.0;
    for (std::size_t k = 0; k < n_vaccines; ++k) {
      lagged[k] = catalog.doses(k) == 1 ? 0.0 : static_cast<double>(doses[j][k]);
      total += lagged[k];
    }
    if (!(total > 0.0))
      throw Error(ErrorCode::ZeroLaggedDoses, "fully vaccinated count exceeds single-dose uptake with no multi-dose doses");
  }
  for (double& p : lagged) p /= total;
  auto split = multinomial(rng, remaining, lagged);
  for (std::size_t k = 0; k < n_vaccines; ++k) out.counts[k] += split[k];
  return out;
}

struct CompletionData {
  std::vector<CompletionRow> rows;        // contributing
  std::vector<ReportRef> pure_type1;      // λ ≡ 0; consistent rows contribute nothing
  std::vector<ReportRef> excluded;        // undefined context or impossible under λ ≡ 0
};

inline CompletionData completion_rows(const Corpus& corpus, const ContextTable& contexts) {
  CompletionData out;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& reports = corpus.countries[i].reports;
    for (std::size_t j = 0; j < reports.size(); ++j) {
      if (!reports[j].cum_fully) continue;
      CompletionRow row{{i, j}, reports[j].cum_doses, *reports[j].cum_fully, contexts[i][j]};
      if (j == 0) {
        out.excluded.push_back(row.ref);
        continue;
      }
      if (row.ctx.pure_type1()) {
        (row.x == row.y ? out.pure_type1 : out.excluded).push_back(row.ref);
        continue;
      }
      if ((row.ctx.q[1] > 0.0 && !(row.ctx.w2 > 0.0)) || (row.ctx.q[2] > 0.0 && !(row.ctx.w3 > 0.0))) {
        out.excluded.push_back(row.ref);
        continue;
      }
      out.rows.push_back(std::move(row));
    }
  }
  return out;
}

/// Posterior for (beta0, beta1) under a flat prior, updated jointly. The
/// sampler moves (gamma0, beta1) with gamma0 = beta0 + beta1 * c, where c is
/// the mean log dosing pace; beta0 is recorded as a derived quantity.
class CompletionModel final : public mcmc::Model {
 public:
  explicit CompletionModel(CompletionData data) : data_(std::move(data)) {
    for (const auto& row : data_.rows) {
      Term t;
      t.count = 2.0 * static_cast<double>(row.x - row.y);
      t.base = row.ctx.q[1] * static_cast<double>(row.x) + row.ctx.q[2] * 4.0 / 3.0 * static_cast<double>(row.x);
      t.a2 = row.ctx.q[1];
      t.a3 = row.ctx.q[2] * 2.0 / 3.0;
      t.log_w2 = row.ctx.q[1] > 0.0 ? std::log(row.ctx.w2) : 0.0;
      t.log_w3 = row.ctx.q[2] > 0.0 ? std::log(row.ctx.w3) : 0.0;
      t.constant = -std::lgamma(t.count + 1.0);
      terms_.push_back(t);
    }
    double acc = 0.0;
    std::size_t n = 0;
    for (const auto& t : terms_) {
      if (t.a2 > 0.0) acc += t.log_w2, ++n;
      if (t.a3 > 0.0) acc += t.log_w3, ++n;
    }
    center_ = n ? acc / static_cast<double>(n) : 0.0;
  }

  /// Sampler state for a given (beta0, beta1).
  std::array<double, 2> state_for(double beta0, double beta1) const { return {beta0 + beta1 * center_, beta1}; }
  double center() const noexcept { return center_; }

  const CompletionData& data() const noexcept { return data_; }

  std::vector<mcmc::Node> nodes() const override {
    return {{"gamma0_v2", mcmc::Support::Real, 1, 0.0, 1.0, false}, {"beta1_v2", mcmc::Support::Real}};
  }
  std::vector<mcmc::Block> blocks() const override { return {{{0, 1}}}; }

  std::vector<std::string> derived_names() const override { return {"beta0_v2"}; }
  void derived(std::span<const double> state, std::span<double> out) const override {
    out[0] = state[0] - state[1] * center_;
  }

  double log_density(std::span<const double> state) const override {
    const double b1 = state[1], b0 = state[0] - b1 * center_;
    double total = 0.0;
    for (const auto& t : terms_) {
      double pace = 0.0;
      if (t.a2 > 0.0) pace += t.a2 * std::exp(b0 + b1 * t.log_w2);
      if (t.a3 > 0.0) pace += t.a3 * std::exp(b0 + b1 * t.log_w3);
      const double lambda = t.base + pace;
      if (t.count == 0.0) {
        total -= lambda;
      } else {
        if (!(lambda > 0.0)) return stats::kNegInf;
        total += t.constant + t.count * std::log(lambda) - lambda;
      }
    }
    return total;
  }

  void initialize(std::span<double> state, CounterRng& rng) const override {
    state[1] = 1.0 + 0.1 * rng.normal();
    state[0] = -1.0 + 0.5 * rng.normal() + state[1] * center_;
  }

  std::optional<std::string> propriety_violation() const override {
    if (check_theorem2(data_.rows)) return std::nullopt;
    return "fewer than two contributing fully-vaccinated reports with distinct dosing-pace regressors";
  }

 private:
  struct Term {
    double count = 0.0, base = 0.0, a2 = 0.0, a3 = 0.0, log_w2 = 0.0, log_w3 = 0.0, constant = 0.0;
  };
  CompletionData data_;
  std::vector<Term> terms_;
  double center_ = 0.0;
};

inline void write_context_dump(std::ostream& out, const Corpus& corpus, const ContextTable& contexts) {
  csv::write_row(out, {"country", "date", "j", "jstar", "Z", "W2", "W3", "q1", "q2", "q3", "fallback_weights"});
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& reports = corpus.countries[i].reports;
    for (std::size_t j = 0; j < reports.size(); ++j) {
      const auto& c = contexts[i][j];
      csv::write_row(out, {corpus.countries[i].code, corpus.date_text(reports[j].date), std::to_string(j),
                           c.jstar ? std::to_string(*c.jstar) : "", csv::format_double(c.z),
                           csv::format_double(c.w2), csv::format_double(c.w3), csv::format_double(c.q[0]),
                           csv::format_double(c.q[1]), csv::format_double(c.q[2]), c.fallback_weights ? "1" : "0"});
    }
  }
}

}  // namespace sero
