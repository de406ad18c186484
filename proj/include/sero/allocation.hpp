#pragma once

// Per-vaccine split of cumulative doses: multinomial regression on
// log-weights built from delivery shares and vaccines in use.

#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "sero/corpus.hpp"
#include "sero/error.hpp"
#include "sero/mcmc.hpp"
#include "sero/rng.hpp"
#include "sero/stats.hpp"

namespace sero {

struct ReportRef {
  std::size_t country = 0;
  std::size_t report = 0;
  bool operator==(const ReportRef&) const = default;
};

struct AllocationWeights {
  // [country][report][vaccine]
  std::vector<std::vector<std::vector<double>>> dw;
  std::vector<std::vector<std::vector<double>>> w;

  const std::vector<double>& at(std::size_t i, std::size_t j) const { return w.at(i).at(j); }

  std::vector<std::size_t> support(std::size_t i, std::size_t j) const {
    std::vector<std::size_t> out;
    const auto& row = at(i, j);
    for (std::size_t k = 0; k < row.size(); ++k)
      if (row[k] > 0.0) out.push_back(k);
    return out;
  }
};

inline AllocationWeights build_weights(const Corpus& corpus, const DeliveryShares& shares) {
  const std::size_t n_vaccines = corpus.catalog.size();
  AllocationWeights out;
  out.dw.resize(corpus.size());
  out.w.resize(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& reports = corpus.countries[i].reports;
    const auto& s = shares.row(i);
    std::vector<double> running(n_vaccines, 0.0);
    std::int64_t prev = 0;
    for (const auto& r : reports) {
      const double dx = static_cast<double>(r.cum_doses - prev);
      prev = r.cum_doses;
      std::vector<double> dw(n_vaccines, 0.0);
      for (std::size_t k = 0; k < n_vaccines; ++k) {
        if (r.uses(k)) dw[k] = s[k] * dx;
        running[k] += dw[k];
      }
      out.dw[i].push_back(std::move(dw));
      out.w[i].push_back(running);
    }
  }
  return out;
}

/// Usage probabilities proportional to w^beta on the support, zero elsewhere.
inline std::vector<double> allocation_probs(std::span<const double> w, double beta) {
  std::vector<double> logits;
  for (double v : w)
    if (v > 0.0) logits.push_back(beta * std::log(v));
  if (logits.empty()) throw Error(ErrorCode::EmptySupport, "no vaccine has positive allocation weight");
  const double norm = stats::log_sum_exp(logits);
  std::vector<double> p(w.size(), 0.0);
  for (std::size_t k = 0; k < w.size(); ++k)
    if (w[k] > 0.0) p[k] = std::exp(beta * std::log(w[k]) - norm);
  return p;
}

struct ObservedSplit {
  ReportRef ref;
  std::vector<std::int64_t> counts;
};

inline std::vector<ObservedSplit> observed_splits(const Corpus& corpus) {
  std::vector<ObservedSplit> out;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& reports = corpus.countries[i].reports;
    for (std::size_t j = 0; j < reports.size(); ++j)
      if (reports[j].per_vaccine_doses) out.push_back({{i, j}, *reports[j].per_vaccine_doses});
  }
  return out;
}

inline bool off_support(const ObservedSplit& row, const AllocationWeights& weights) {
  const auto& w = weights.at(row.ref.country, row.ref.report);
  for (std::size_t k = 0; k < w.size(); ++k)
    if (row.counts[k] > 0 && !(w[k] > 0.0)) return true;
  return false;
}

inline double multinomial_logpmf(std::span<const std::int64_t> counts, std::span<const double> probs) {
  std::int64_t n = 0;
  double out = 0.0;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    n += counts[k];
    if (counts[k] == 0) continue;
    if (!(probs[k] > 0.0)) return stats::kNegInf;
    out += static_cast<double>(counts[k]) * std::log(probs[k]) - std::lgamma(static_cast<double>(counts[k]) + 1.0);
  }
  return out + std::lgamma(static_cast<double>(n) + 1.0);
}

struct AllocationLoglik {
  double value = 0.0;
  std::vector<ReportRef> off_support;
};

inline AllocationLoglik allocation_loglik(const std::vector<ObservedSplit>& rows, const AllocationWeights& weights,
                                          double beta) {
  AllocationLoglik out;
  for (const auto& row : rows) {
    if (off_support(row, weights)) {
      out.off_support.push_back(row.ref);
      out.value = stats::kNegInf;
      continue;
    }
    const auto& w = weights.at(row.ref.country, row.ref.report);
    std::int64_t n = 0;
    for (auto c : row.counts) n += c;
    if (n == 0) continue;
    out.value += multinomial_logpmf(row.counts, allocation_probs(w, beta));
  }
  return out;
}

struct Theorem1Check {
  bool holds = false;
  std::optional<ReportRef> witness;
};

/// Flat-prior propriety: some observed row has at least two positive
/// on-support counts.
inline Theorem1Check check_theorem1(const std::vector<ObservedSplit>& rows, const AllocationWeights& weights) {
  for (const auto& row : rows) {
    const auto& w = weights.at(row.ref.country, row.ref.report);
    int positive = 0;
    for (std::size_t k = 0; k < w.size(); ++k) positive += (w[k] > 0.0 && row.counts[k] > 0);
    if (positive >= 2) return {true, row.ref};
  }
  return {};
}

template <class Rng>
std::vector<std::int64_t> impute_doses(std::int64_t total, std::span<const double> w, double beta, Rng& rng) {
  const auto p = allocation_probs(w, beta);
  return multinomial(rng, total, p);
}

/// Posterior for the allocation coefficient under a flat prior.
class AllocationModel final : public mcmc::Model {
 public:
  AllocationModel(const Corpus& corpus, const DeliveryShares& shares)
      : weights_(build_weights(corpus, shares)) {
    for (auto& row : observed_splits(corpus)) {
      if (off_support(row, weights_)) {
        excluded_.push_back(row.ref);
        continue;
      }
      Row r;
      const auto& w = weights_.at(row.ref.country, row.ref.report);
      std::int64_t n = 0;
      for (std::size_t k = 0; k < w.size(); ++k) {
        if (!(w[k] > 0.0)) continue;
        r.log_w.push_back(std::log(w[k]));
        r.counts.push_back(static_cast<double>(row.counts[k]));
        r.constant -= std::lgamma(static_cast<double>(row.counts[k]) + 1.0);
        n += row.counts[k];
      }
      if (n == 0) continue;
      r.n = static_cast<double>(n);
      r.constant += std::lgamma(r.n + 1.0);
      rows_.push_back(std::move(r));
      used_.push_back(std::move(row));
    }
    theorem_ = check_theorem1(used_, weights_);
  }

  const AllocationWeights& weights() const noexcept { return weights_; }
  const std::vector<ReportRef>& excluded() const noexcept { return excluded_; }
  const Theorem1Check& theorem1() const noexcept { return theorem_; }
  std::size_t n_rows() const noexcept { return rows_.size(); }

  std::vector<mcmc::Node> nodes() const override { return {{"beta_v1", mcmc::Support::Real}}; }

  double log_density(std::span<const double> state) const override {
    const double beta = state[0];
    double total = 0.0;
    std::vector<double> logits;
    for (const auto& r : rows_) {
      logits.resize(r.log_w.size());
      double dot = 0.0;
      for (std::size_t k = 0; k < r.log_w.size(); ++k) {
        logits[k] = beta * r.log_w[k];
        dot += r.counts[k] * logits[k];
      }
      total += r.constant + dot - r.n * stats::log_sum_exp(logits);
    }
    return total;
  }

  void initialize(std::span<double> state, CounterRng& rng) const override { state[0] = 1.0 + 0.5 * rng.normal(); }

  std::optional<std::string> propriety_violation() const override {
    if (theorem_.holds) return std::nullopt;
    return "no observed per-vaccine report has two or more positive counts on its support";
  }

 private:
  struct Row {
    std::vector<double> log_w;
    std::vector<double> counts;
    double n = 0.0;
    double constant = 0.0;
  };
  AllocationWeights weights_;
  std::vector<Row> rows_;
  std::vector<ObservedSplit> used_;
  std::vector<ReportRef> excluded_;
  Theorem1Check theorem_;
};

/// Full per-vaccine cumulative split for every report: observed rows are
/// copied, the rest drawn from the allocation model at `beta`.
template <class Rng>
std::vector<std::vector<std::vector<std::int64_t>>> impute_all_doses(const Corpus& corpus,
                                                                      const AllocationWeights& weights, double beta,
                                                                      Rng& rng) {
  std::vector<std::vector<std::vector<std::int64_t>>> out(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& reports = corpus.countries[i].reports;
    for (std::size_t j = 0; j < reports.size(); ++j) {
      if (reports[j].per_vaccine_doses) {
        out[i].push_back(*reports[j].per_vaccine_doses);
      } else if (reports[j].cum_doses == 0) {
        out[i].emplace_back(corpus.catalog.size(), 0);
      } else {
        out[i].push_back(impute_doses(reports[j].cum_doses, weights.at(i, j), beta, rng));
      }
    }
  }
  return out;
}

/// Reports where an imputed cumulative per-vaccine count decreases.
inline std::vector<ReportRef> nonmonotone_splits(const std::vector<std::vector<std::vector<std::int64_t>>>& x) {
  std::vector<ReportRef> out;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 1; j < x[i].size(); ++j)
      for (std::size_t k = 0; k < x[i][j].size(); ++k)
        if (x[i][j][k] < x[i][j - 1][k]) {
          out.push_back({i, j});
          break;
        }
  return out;
}

inline void write_allocation_diagnostics(std::ostream& out, const Corpus& corpus, const AllocationWeights& weights) {
  csv::write_row(out, {"country", "date", "support_size", "observed_split", "off_support"});
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& reports = corpus.countries[i].reports;
    for (std::size_t j = 0; j < reports.size(); ++j) {
      bool off = false;
      if (reports[j].per_vaccine_doses) off = off_support({{i, j}, *reports[j].per_vaccine_doses}, weights);
      csv::write_row(out, {corpus.countries[i].code, corpus.date_text(reports[j].date),
                           std::to_string(weights.support(i, j).size()),
                           reports[j].per_vaccine_doses ? "1" : "0", off ? "1" : "0"});
    }
  }
}

}  // namespace sero
