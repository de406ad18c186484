#pragma once

// Input datasets: parsing, validation, indexing, and the derived quantities
// every later stage reads (delivery shares, standardized covariates,
// confirmed ratios). A Corpus is immutable once ingested.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "sero/catalog.hpp"
#include "sero/csv.hpp"
#include "sero/date.hpp"
#include "sero/error.hpp"

namespace sero {

struct VaccinationReport {
  Day date = 0;
  std::int64_t cum_doses = 0;
  std::optional<std::int64_t> cum_fully;
  std::vector<std::size_t> vaccines_in_use;  // zero-based catalog indices, ascending
  std::optional<std::vector<std::int64_t>> per_vaccine_doses;  // one entry per catalog vaccine

  bool uses(std::size_t k) const {
    return std::binary_search(vaccines_in_use.begin(), vaccines_in_use.end(), k);
  }
  bool operator==(const VaccinationReport&) const = default;
};

struct ConfirmedPoint {
  Day date = 0;
  std::int64_t cumulative = 0;
  bool operator==(const ConfirmedPoint&) const = default;
};

struct Country {
  std::string code;
  double population = 0.0;
  double pop_density = 0.0;  // raw, people per km^2
  double gdp_pc = 0.0;       // raw, per capita
  std::string confirmed_ref;
  std::vector<ConfirmedPoint> confirmed;
  std::vector<VaccinationReport> reports;

  double log_pop_density() const { return std::log(pop_density); }
  double log_gdp() const { return std::log(gdp_pc); }
  bool operator==(const Country&) const = default;
};

struct DeliveryRecord {
  std::size_t country = 0;
  std::vector<double> amounts;  // doses delivered per catalog vaccine
  bool operator==(const DeliveryRecord&) const = default;
};

struct DeliveryShares {
  std::vector<std::vector<double>> shares;  // [country][vaccine], rows sum to 1
  std::vector<bool> in_delivery_set;
  const std::vector<double>& row(std::size_t i) const { return shares.at(i); }
};

struct ClinicalTrial {
  std::string manufacturer;
  int dose_stage = 1;
  std::int64_t n_vaccinated = 0;        // N^(V)
  std::int64_t cases_vaccinated = 0;    // n^(V)
  std::int64_t n_placebo = 0;           // N^(C)
  std::int64_t cases_placebo = 0;       // n^(C)
  bool operator==(const ClinicalTrial&) const = default;
};

/// Test-accuracy evidence: validation counts (hits, misses) or a fixed value.
struct AccuracyEvidence {
  std::optional<std::int64_t> hits;
  std::optional<std::int64_t> misses;
  std::optional<double> fixed;
  bool operator==(const AccuracyEvidence&) const = default;
};

struct Serosurvey {
  std::size_t country = 0;
  Day end_date = 0;
  std::int64_t n_samples = 0;
  std::int64_t n_positive = 0;
  AccuracyEvidence sensitivity;  // hits = true positives, misses = false negatives
  AccuracyEvidence specificity;  // hits = true negatives, misses = false positives
  bool operator==(const Serosurvey&) const = default;
};

struct ValidationIssue {
  std::string file;
  std::size_t line = 0;
  std::string code;
  std::string message;
  bool fatal = true;
};

struct ValidationReport {
  std::vector<ValidationIssue> issues;

  bool has_fatal() const {
    return std::any_of(issues.begin(), issues.end(), [](const auto& i) { return i.fatal; });
  }

  nlohmann::json to_json() const {
    auto out = nlohmann::json::array();
    for (const auto& i : issues)
      out.push_back({{"file", i.file}, {"line", i.line}, {"code", i.code}, {"message", i.message}});
    return out;
  }
};

class IngestError : public Error {
 public:
  IngestError(ErrorCode code, const std::string& message, ValidationReport report)
      : Error(code, message), report_(std::move(report)) {}
  const ValidationReport& report() const noexcept { return report_; }

 private:
  ValidationReport report_;
};

struct CorpusPaths {
  std::filesystem::path vaccination, delivery, trials, surveys, countries;
};

struct IngestOptions {
  bool allow_monotonic_repair = false;
};

class Corpus {
 public:
  Catalog catalog;
  std::chrono::sys_days epoch{};
  Day last_day = 0;
  std::vector<Country> countries;
  std::vector<DeliveryRecord> deliveries;
  std::vector<ClinicalTrial> trials;
  std::vector<Serosurvey> surveys;
  ValidationReport report;

  std::size_t size() const noexcept { return countries.size(); }

  std::optional<std::size_t> country_index(const std::string& code) const {
    for (std::size_t i = 0; i < countries.size(); ++i)
      if (countries[i].code == code) return i;
    return std::nullopt;
  }

  std::vector<Day> report_dates(std::size_t i) const {
    std::vector<Day> out;
    for (const auto& r : countries.at(i).reports) out.push_back(r.date);
    return out;
  }

  std::vector<std::int64_t> cum_doses(std::size_t i) const {
    std::vector<std::int64_t> out;
    for (const auto& r : countries.at(i).reports) out.push_back(r.cum_doses);
    return out;
  }

  double total_population() const {
    double p = 0.0;
    for (const auto& c : countries) p += c.population;
    return p;
  }

  std::string date_text(Day d) const { return format_iso_date(epoch + std::chrono::days{d}); }

  /// Cumulative confirmed cases over population, carrying the most recent
  /// value at or before `t` forward; zero before the first record.
  double confirmed_ratio(std::size_t i, Day t) const {
    if (t < 0 || t > last_day)
      throw Error(ErrorCode::DateOutOfRange, "day " + std::to_string(t) + " outside [0, " + std::to_string(last_day) + "]");
    const auto& c = countries.at(i);
    auto it = std::upper_bound(c.confirmed.begin(), c.confirmed.end(), t,
                               [](Day day, const ConfirmedPoint& p) { return day < p.date; });
    if (it == c.confirmed.begin()) return 0.0;
    return static_cast<double>(std::prev(it)->cumulative) / c.population;
  }

  bool operator==(const Corpus& o) const {
    return catalog == o.catalog && epoch == o.epoch && last_day == o.last_day && countries == o.countries &&
           deliveries == o.deliveries && trials == o.trials && surveys == o.surveys;
  }
};

// ---------------------------------------------------------------------------
// Delivery shares and covariates.

inline DeliveryShares compute_delivery_shares(const std::vector<DeliveryRecord>& deliveries, std::size_t n_countries,
                                              std::size_t n_vaccines) {
  DeliveryShares out;
  out.shares.assign(n_countries, std::vector<double>(n_vaccines, 0.0));
  out.in_delivery_set.assign(n_countries, false);
  std::vector<double> global(n_vaccines, 0.0);
  double global_total = 0.0;
  for (const auto& rec : deliveries) {
    if (rec.country >= n_countries || rec.amounts.size() != n_vaccines)
      throw Error(ErrorCode::InvariantViolation, "delivery record shape mismatch");
    double total = 0.0;
    for (double a : rec.amounts) {
      if (a < 0.0) throw Error(ErrorCode::InvariantViolation, "negative delivery amount");
      total += a;
    }
    if (!(total > 0.0))
      throw Error(ErrorCode::InvariantViolation, "delivery record with zero total for country " + std::to_string(rec.country));
    for (std::size_t k = 0; k < n_vaccines; ++k) {
      out.shares[rec.country][k] = rec.amounts[k] / total;
      global[k] += rec.amounts[k];
    }
    global_total += total;
    out.in_delivery_set[rec.country] = true;
  }
  if (!(global_total > 0.0)) throw Error(ErrorCode::EmptyDeliverySet, "no country has delivery data");
  for (auto& g : global) g /= global_total;
  for (std::size_t i = 0; i < n_countries; ++i)
    if (!out.in_delivery_set[i]) out.shares[i] = global;
  return out;
}

inline DeliveryShares compute_delivery_shares(const Corpus& corpus) {
  return compute_delivery_shares(corpus.deliveries, corpus.size(), corpus.catalog.size());
}

struct StandardizedCovariate {
  std::vector<double> values;
  double center = 0.0;
  double scale = 1.0;  // sample standard deviation
};

inline StandardizedCovariate standardize(const std::vector<double>& raw, const std::string& name) {
  if (raw.size() < 2) throw Error(ErrorCode::DegenerateCovariate, name + ": need at least two countries");
  StandardizedCovariate out;
  double sum = 0.0;
  for (double v : raw) sum += v;
  out.center = sum / static_cast<double>(raw.size());
  double ss = 0.0;
  for (double v : raw) ss += (v - out.center) * (v - out.center);
  out.scale = std::sqrt(ss / static_cast<double>(raw.size() - 1));
  if (!(out.scale > 0.0)) throw Error(ErrorCode::DegenerateCovariate, name + ": zero standard deviation");
  out.values.reserve(raw.size());
  for (double v : raw) out.values.push_back((v - out.center) / out.scale);
  return out;
}

struct Covariates {
  StandardizedCovariate pop_density;  // PD_i, from log density
  StandardizedCovariate gdp;          // G_i, from log GDP per capita

  nlohmann::json constants() const {
    return {{"log_pop_density", {{"mean", pop_density.center}, {"sd", pop_density.scale}}},
            {"log_gdp_pc", {{"mean", gdp.center}, {"sd", gdp.scale}}}};
  }
};

/// Standardizes over every country in the corpus so that prediction inputs
/// share the fit scale.
inline Covariates standardize_covariates(const std::vector<Country>& countries) {
  std::vector<double> pd, g;
  for (const auto& c : countries) {
    if (!(c.pop_density > 0.0) || !(c.gdp_pc > 0.0))
      throw Error(ErrorCode::DegenerateCovariate, c.code + ": density and GDP must be positive");
    pd.push_back(c.log_pop_density());
    g.push_back(c.log_gdp());
  }
  return {standardize(pd, "log population density"), standardize(g, "log GDP per capita")};
}

// ---------------------------------------------------------------------------
// Ingestion.

namespace detail {

class IssueLog {
 public:
  explicit IssueLog(ValidationReport& report) : report_(report) {}

  void fatal(const std::filesystem::path& file, std::size_t line, ErrorCode code, const std::string& msg) {
    report_.issues.push_back({file.filename().string(), line, std::string(to_string(code)), msg, true});
    if (!first_) first_ = code;
  }
  void warn(const std::filesystem::path& file, std::size_t line, const std::string& code, const std::string& msg) {
    report_.issues.push_back({file.filename().string(), line, code, msg, false});
  }
  std::optional<ErrorCode> first() const { return first_; }

 private:
  ValidationReport& report_;
  std::optional<ErrorCode> first_;
};

struct RawReport {
  std::size_t line;
  std::chrono::sys_days date;
  VaccinationReport report;
};

inline std::optional<std::chrono::sys_days> try_date(const std::string& text) {
  try {
    return parse_iso_date(text);
  } catch (const Error&) {
    return std::nullopt;
  }
}

}  // namespace detail

inline Corpus ingest_corpus(const CorpusPaths& paths, const Catalog& catalog, const IngestOptions& options = {}) {
  Corpus corpus;
  corpus.catalog = catalog;
  detail::IssueLog log(corpus.report);
  const std::size_t K = catalog.size();
  auto num_i64 = [](const std::string& s) { return csv::parse_number<std::int64_t>(s); };
  auto num_f64 = [](const std::string& s) { return csv::parse_number<double>(s); };

  std::vector<std::chrono::sys_days> all_dates;

  // countries.csv (+ referenced confirmed series)
  std::vector<std::vector<std::pair<std::size_t, std::pair<std::chrono::sys_days, std::int64_t>>>> confirmed_raw;
  {
    const auto table = csv::read(paths.countries);
    const auto c_code = table.require_column("country");
    const auto c_pop = table.require_column("population");
    const auto c_pd = table.require_column("pop_density");
    const auto c_gdp = table.require_column("gdp_pc");
    const auto c_conf = table.require_column("confirmed");
    std::map<std::string, csv::Table> series_cache;
    for (const auto& row : table.rows) {
      Country c;
      c.code = row.cells[c_code];
      auto pop = num_f64(row.cells[c_pop]);
      auto pd = num_f64(row.cells[c_pd]);
      auto gdp = num_f64(row.cells[c_gdp]);
      if (c.code.empty() || !pop || !pd || !gdp) {
        log.fatal(paths.countries, row.line, ErrorCode::MalformedRow, "unparseable country row");
        continue;
      }
      if (corpus.country_index(c.code)) {
        log.fatal(paths.countries, row.line, ErrorCode::MalformedRow, "duplicate country '" + c.code + "'");
        continue;
      }
      if (!(*pop > 0.0) || !(*pd > 0.0) || !(*gdp > 0.0)) {
        log.fatal(paths.countries, row.line, ErrorCode::InvariantViolation, c.code + ": population, density and GDP must be positive");
        continue;
      }
      c.population = *pop;
      c.pop_density = *pd;
      c.gdp_pc = *gdp;
      c.confirmed_ref = row.cells[c_conf];
      confirmed_raw.emplace_back();
      if (!c.confirmed_ref.empty()) {
        const auto ref_path = paths.countries.parent_path() / c.confirmed_ref;
        auto it = series_cache.find(c.confirmed_ref);
        if (it == series_cache.end()) it = series_cache.emplace(c.confirmed_ref, csv::read(ref_path)).first;
        const auto& series = it->second;
        const auto s_code = series.require_column("country");
        const auto s_date = series.require_column("date");
        const auto s_val = series.require_column("confirmed");
        for (const auto& srow : series.rows) {
          if (srow.cells[s_code] != c.code) continue;
          auto d = detail::try_date(srow.cells[s_date]);
          auto v = num_i64(srow.cells[s_val]);
          if (!d || !v || *v < 0) {
            log.fatal(ref_path, srow.line, ErrorCode::MalformedRow, "bad confirmed-series row");
            continue;
          }
          all_dates.push_back(*d);
          confirmed_raw.back().push_back({srow.line, {*d, *v}});
        }
      }
      corpus.countries.push_back(std::move(c));
    }
  }

  // vaccination.csv
  std::vector<std::vector<detail::RawReport>> reports_raw(corpus.size());
  {
    const auto table = csv::read(paths.vaccination);
    if (table.rows.empty()) {
      log.fatal(paths.vaccination, 0, ErrorCode::MalformedRow, "no records");
      throw IngestError(ErrorCode::MalformedRow, "no records in " + paths.vaccination.string(), corpus.report);
    }
    const auto c_code = table.require_column("country");
    const auto c_date = table.require_column("date");
    const auto c_x = table.require_column("cum_doses");
    const auto c_y = table.require_column("cum_fully");
    const auto c_use = table.require_column("vaccines_in_use");
    const auto c_per = table.require_column("per_vaccine");
    for (const auto& row : table.rows) {
      auto fail = [&](ErrorCode code, const std::string& msg) { log.fatal(paths.vaccination, row.line, code, msg); };
      auto idx = corpus.country_index(row.cells[c_code]);
      if (!idx) {
        fail(ErrorCode::MalformedRow, "unknown country '" + row.cells[c_code] + "'");
        continue;
      }
      auto date = detail::try_date(row.cells[c_date]);
      auto x = num_i64(row.cells[c_x]);
      if (!date || !x || *x < 0) {
        fail(ErrorCode::MalformedRow, "bad date or cumulative doses");
        continue;
      }
      VaccinationReport rep;
      rep.cum_doses = *x;
      if (!row.cells[c_y].empty()) {
        auto y = num_i64(row.cells[c_y]);
        if (!y || *y < 0) {
          fail(ErrorCode::MalformedRow, "bad cum_fully");
          continue;
        }
        rep.cum_fully = *y;
      }
      bool ok = true;
      std::stringstream uses(row.cells[c_use]);
      for (std::string item; std::getline(uses, item, ';');) {
        if (item.empty()) continue;
        auto k = catalog.find(item);
        if (!k) {
          fail(ErrorCode::MalformedRow, "unknown vaccine '" + item + "'");
          ok = false;
          break;
        }
        rep.vaccines_in_use.push_back(*k);
      }
      std::sort(rep.vaccines_in_use.begin(), rep.vaccines_in_use.end());
      rep.vaccines_in_use.erase(std::unique(rep.vaccines_in_use.begin(), rep.vaccines_in_use.end()),
                                rep.vaccines_in_use.end());
      if (ok && !row.cells[c_per].empty()) {
        std::vector<std::int64_t> per(K, 0);
        std::stringstream items(row.cells[c_per]);
        for (std::string item; std::getline(items, item, ';');) {
          const auto eq = item.find('=');
          auto k = eq == std::string::npos ? std::nullopt : catalog.find(item.substr(0, eq));
          auto v = eq == std::string::npos ? std::nullopt : num_i64(item.substr(eq + 1));
          if (!k || !v || *v < 0) {
            fail(ErrorCode::MalformedRow, "bad per_vaccine entry '" + item + "'");
            ok = false;
            break;
          }
          per[*k] += *v;
        }
        rep.per_vaccine_doses = std::move(per);
      }
      if (!ok) continue;
      if (rep.cum_fully && *rep.cum_fully > rep.cum_doses) {
        fail(ErrorCode::InvariantViolation, "cum_fully exceeds cum_doses");
        continue;
      }
      if (rep.per_vaccine_doses) {
        std::int64_t sum = 0;
        for (auto v : *rep.per_vaccine_doses) sum += v;
        if (sum != rep.cum_doses) {
          fail(ErrorCode::InvariantViolation, "per-vaccine doses sum to " + std::to_string(sum) + ", not " +
                                                   std::to_string(rep.cum_doses));
          continue;
        }
      }
      all_dates.push_back(*date);
      reports_raw[*idx].push_back({row.line, *date, std::move(rep)});
    }
  }

  // delivery.csv
  std::vector<std::optional<std::vector<double>>> delivered(corpus.size());
  std::vector<std::size_t> delivery_line(corpus.size(), 0);
  {
    const auto table = csv::read(paths.delivery);
    const auto c_code = table.require_column("country");
    const auto c_vac = table.require_column("vaccine");
    const auto c_doses = table.require_column("doses");
    for (const auto& row : table.rows) {
      auto idx = corpus.country_index(row.cells[c_code]);
      auto k = catalog.find(row.cells[c_vac]);
      auto doses = num_f64(row.cells[c_doses]);
      if (!idx || !k || !doses || *doses < 0.0) {
        log.fatal(paths.delivery, row.line, ErrorCode::MalformedRow, "bad delivery row");
        continue;
      }
      if (!delivered[*idx]) delivered[*idx] = std::vector<double>(K, 0.0);
      (*delivered[*idx])[*k] += *doses;
      delivery_line[*idx] = row.line;
    }
  }

  // trials.csv
  {
    const auto table = csv::read(paths.trials);
    const auto c_m = table.require_column("manufacturer");
    const auto c_d = table.require_column("dose");
    const auto c_nv = table.require_column("NV");
    const auto c_cv = table.require_column("nV");
    const auto c_nc = table.require_column("NC");
    const auto c_cc = table.require_column("nC");
    for (const auto& row : table.rows) {
      auto dose = csv::parse_number<int>(row.cells[c_d]);
      auto nv = num_i64(row.cells[c_nv]), cv = num_i64(row.cells[c_cv]);
      auto nc = num_i64(row.cells[c_nc]), cc = num_i64(row.cells[c_cc]);
      if (!dose || !nv || !cv || !nc || !cc || !catalog.find(row.cells[c_m])) {
        log.fatal(paths.trials, row.line, ErrorCode::MalformedRow, "bad trial row");
        continue;
      }
      if (*nv <= 0 || *nc <= 0 || *cv < 0 || *cc < 0 || *cv > *nv || *cc > *nc || *dose < 1 || *dose > 3) {
        log.fatal(paths.trials, row.line, ErrorCode::InvariantViolation, "trial counts out of range");
        continue;
      }
      corpus.trials.push_back({row.cells[c_m], *dose, *nv, *cv, *nc, *cc});
    }
  }

  // surveys.csv
  std::vector<std::pair<std::chrono::sys_days, Serosurvey>> surveys_raw;
  {
    const auto table = csv::read(paths.surveys);
    const auto c_code = table.require_column("country");
    const auto c_date = table.require_column("end_date");
    const auto c_n = table.require_column("N");
    const auto c_x = table.require_column("X");
    const auto c_tp = table.require_column("sens_tp"), c_fn = table.require_column("sens_fn");
    const auto c_tn = table.require_column("spec_tn"), c_fp = table.require_column("spec_fp");
    const auto c_sens = table.column("sens"), c_spec = table.column("spec");
    for (const auto& row : table.rows) {
      auto fail = [&](ErrorCode code, const std::string& msg) { log.fatal(paths.surveys, row.line, code, msg); };
      auto idx = corpus.country_index(row.cells[c_code]);
      auto date = detail::try_date(row.cells[c_date]);
      auto n = num_i64(row.cells[c_n]), x = num_i64(row.cells[c_x]);
      if (!idx || !date || !n || !x) {
        fail(ErrorCode::MalformedRow, "bad survey row");
        continue;
      }
      if (*n <= 0 || *x < 0 || *x > *n) {
        fail(ErrorCode::InvariantViolation, "survey counts out of range");
        continue;
      }
      auto evidence = [&](std::size_t hits, std::size_t misses, std::optional<std::size_t> fixed,
                          const char* what) -> std::optional<AccuracyEvidence> {
        AccuracyEvidence e;
        if (!row.cells[hits].empty() || !row.cells[misses].empty()) {
          e.hits = num_i64(row.cells[hits]);
          e.misses = num_i64(row.cells[misses]);
          if (!e.hits || !e.misses || *e.hits < 0 || *e.misses < 0) {
            fail(ErrorCode::MalformedRow, std::string("bad ") + what + " counts");
            return std::nullopt;
          }
        } else if (fixed && !row.cells[*fixed].empty()) {
          e.fixed = num_f64(row.cells[*fixed]);
          if (!e.fixed || !(*e.fixed > 0.0) || *e.fixed > 1.0) {
            fail(ErrorCode::MalformedRow, std::string("bad fixed ") + what);
            return std::nullopt;
          }
        } else {
          fail(ErrorCode::MalformedRow, std::string("no ") + what + " evidence");
          return std::nullopt;
        }
        return e;
      };
      auto sens = evidence(c_tp, c_fn, c_sens, "sensitivity");
      if (!sens) continue;
      auto spec = evidence(c_tn, c_fp, c_spec, "specificity");
      if (!spec) continue;
      Serosurvey s;
      s.country = *idx;
      s.n_samples = *n;
      s.n_positive = *x;
      s.sensitivity = *sens;
      s.specificity = *spec;
      all_dates.push_back(*date);
      surveys_raw.emplace_back(*date, s);
    }
  }

  if (auto code = log.first()) throw IngestError(*code, "corpus failed validation", corpus.report);
  if (all_dates.empty()) throw IngestError(ErrorCode::MalformedRow, "no dated records", corpus.report);

  corpus.epoch = *std::min_element(all_dates.begin(), all_dates.end());
  corpus.last_day = static_cast<Day>((*std::max_element(all_dates.begin(), all_dates.end()) - corpus.epoch).count());
  auto offset = [&](std::chrono::sys_days d) { return static_cast<Day>((d - corpus.epoch).count()); };

  for (std::size_t i = 0; i < corpus.size(); ++i) {
    auto& country = corpus.countries[i];
    const auto& conf_path = paths.countries.parent_path() / country.confirmed_ref;
    auto& series = confirmed_raw[i];
    std::stable_sort(series.begin(), series.end(), [](auto& a, auto& b) { return a.second.first < b.second.first; });
    std::int64_t running = 0;
    for (std::size_t s = 0; s < series.size(); ++s) {
      const auto& [line, point] = series[s];
      if (s > 0 && point.first == series[s - 1].second.first) {
        log.fatal(conf_path, line, ErrorCode::InvariantViolation, country.code + ": duplicate confirmed date");
        continue;
      }
      std::int64_t value = point.second;
      if (value < running) {
        if (!options.allow_monotonic_repair) {
          log.fatal(conf_path, line, ErrorCode::InvariantViolation, country.code + ": confirmed series decreases");
          continue;
        }
        log.warn(conf_path, line, "MonotonicRepair", country.code + ": confirmed clamped from " + std::to_string(value) +
                                                         " to " + std::to_string(running));
        value = running;
      }
      running = value;
      if (static_cast<double>(value) > country.population) {
        log.fatal(conf_path, line, ErrorCode::InvariantViolation, country.code + ": confirmed exceeds population");
        continue;
      }
      country.confirmed.push_back({offset(point.first), value});
    }

    auto& raw = reports_raw[i];
    std::stable_sort(raw.begin(), raw.end(), [](auto& a, auto& b) { return a.date < b.date; });
    std::int64_t max_doses = 0;
    for (std::size_t r = 0; r < raw.size(); ++r) {
      auto& rr = raw[r];
      if (r > 0 && rr.date == raw[r - 1].date) {
        log.fatal(paths.vaccination, rr.line, ErrorCode::InvariantViolation, country.code + ": duplicate report date");
        continue;
      }
      rr.report.date = offset(rr.date);
      if (rr.report.cum_doses < max_doses) {
        if (!options.allow_monotonic_repair) {
          log.fatal(paths.vaccination, rr.line, ErrorCode::InvariantViolation,
                    country.code + ": cumulative doses decrease (" + std::to_string(rr.report.cum_doses) + " < " +
                        std::to_string(max_doses) + ")");
          continue;
        }
        log.warn(paths.vaccination, rr.line, "MonotonicRepair",
                 country.code + ": cum_doses clamped from " + std::to_string(rr.report.cum_doses) + " to " +
                     std::to_string(max_doses));
        rr.report.cum_doses = max_doses;
        if (rr.report.per_vaccine_doses) {
          rr.report.per_vaccine_doses.reset();
          log.warn(paths.vaccination, rr.line, "MonotonicRepair", country.code + ": per-vaccine split dropped");
        }
      }
      max_doses = rr.report.cum_doses;
      country.reports.push_back(std::move(rr.report));
    }

    if (delivered[i]) {
      double total = 0.0;
      for (double a : *delivered[i]) total += a;
      if (!(total > 0.0)) {
        log.fatal(paths.delivery, delivery_line[i], ErrorCode::InvariantViolation, country.code + ": zero total delivery");
        continue;
      }
      corpus.deliveries.push_back({i, *delivered[i]});
    }
  }

  std::stable_sort(surveys_raw.begin(), surveys_raw.end(), [](auto& a, auto& b) {
    return std::tie(a.second.country, a.first) < std::tie(b.second.country, b.first);
  });
  for (auto& [date, s] : surveys_raw) {
    s.end_date = offset(date);
    corpus.surveys.push_back(s);
  }

  if (auto code = log.first()) throw IngestError(*code, "corpus failed validation", corpus.report);
  return corpus;
}

// ---------------------------------------------------------------------------
// Serialization back to the documented CSV layout (ingest ∘ write = identity).

inline void write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const auto& cat = corpus.catalog;
  auto open = [&](const std::string& name) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + (dir / name).string());
    return out;
  };
  auto i64 = [](std::int64_t v) { return std::to_string(v); };

  {
    auto out = open("countries.csv");
    csv::write_row(out, {"country", "population", "pop_density", "gdp_pc", "confirmed"});
    for (const auto& c : corpus.countries)
      csv::write_row(out, {c.code, csv::format_double(c.population), csv::format_double(c.pop_density),
                           csv::format_double(c.gdp_pc), c.confirmed_ref});
  }
  std::map<std::string, std::vector<const Country*>> by_ref;
  for (const auto& c : corpus.countries)
    if (!c.confirmed_ref.empty()) by_ref[c.confirmed_ref].push_back(&c);
  for (const auto& [ref, members] : by_ref) {
    fs::create_directories((dir / ref).parent_path());
    auto out = open(ref);
    csv::write_row(out, {"country", "date", "confirmed"});
    for (const auto* c : members)
      for (const auto& p : c->confirmed) csv::write_row(out, {c->code, corpus.date_text(p.date), i64(p.cumulative)});
  }
  {
    auto out = open("vaccination.csv");
    csv::write_row(out, {"country", "date", "cum_doses", "cum_fully", "vaccines_in_use", "per_vaccine"});
    for (const auto& c : corpus.countries)
      for (const auto& r : c.reports) {
        std::string uses, per;
        for (auto k : r.vaccines_in_use) uses += (uses.empty() ? "" : ";") + std::to_string(cat[k].id);
        if (r.per_vaccine_doses)
          for (std::size_t k = 0; k < cat.size(); ++k)
            per += (k ? ";" : "") + std::to_string(cat[k].id) + "=" + i64((*r.per_vaccine_doses)[k]);
        csv::write_row(out, {c.code, corpus.date_text(r.date), i64(r.cum_doses),
                             r.cum_fully ? i64(*r.cum_fully) : "", uses, per});
      }
  }
  {
    auto out = open("delivery.csv");
    csv::write_row(out, {"country", "vaccine", "doses"});
    for (const auto& d : corpus.deliveries)
      for (std::size_t k = 0; k < cat.size(); ++k)
        if (d.amounts[k] > 0.0)
          csv::write_row(out, {corpus.countries[d.country].code, std::to_string(cat[k].id), csv::format_double(d.amounts[k])});
  }
  {
    auto out = open("trials.csv");
    csv::write_row(out, {"manufacturer", "dose", "NV", "nV", "NC", "nC"});
    for (const auto& t : corpus.trials)
      csv::write_row(out, {t.manufacturer, std::to_string(t.dose_stage), i64(t.n_vaccinated), i64(t.cases_vaccinated),
                           i64(t.n_placebo), i64(t.cases_placebo)});
  }
  {
    auto out = open("surveys.csv");
    csv::write_row(out, {"country", "end_date", "N", "X", "sens_tp", "sens_fn", "spec_tn", "spec_fp", "sens", "spec"});
    auto opt = [&](const std::optional<std::int64_t>& v) { return v ? i64(*v) : std::string(); };
    auto fix = [](const std::optional<double>& v) { return v ? csv::format_double(*v) : std::string(); };
    for (const auto& s : corpus.surveys)
      csv::write_row(out, {corpus.countries[s.country].code, corpus.date_text(s.end_date), i64(s.n_samples),
                           i64(s.n_positive), opt(s.sensitivity.hits), opt(s.sensitivity.misses),
                           opt(s.specificity.hits), opt(s.specificity.misses), fix(s.sensitivity.fixed),
                           fix(s.specificity.fixed)});
  }
}

inline CorpusPaths corpus_paths_in(const std::filesystem::path& dir) {
  return {dir / "vaccination.csv", dir / "delivery.csv", dir / "trials.csv", dir / "surveys.csv", dir / "countries.csv"};
}

}  // namespace sero
