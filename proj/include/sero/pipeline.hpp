#pragma once

// Stage orchestration: ingest, the three vaccination fits, the infection fit,
// prediction, world aggregation and report emission. Every stage reads its
// inputs from the output directory written by earlier stages, so any stage
// can be rerun on its own.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sero/allocation.hpp"
#include "sero/catalog.hpp"
#include "sero/completion.hpp"
#include "sero/corpus.hpp"
#include "sero/csv.hpp"
#include "sero/efficacy.hpp"
#include "sero/error.hpp"
#include "sero/hash.hpp"
#include "sero/infection.hpp"
#include "sero/mcmc.hpp"
#include "sero/rng.hpp"
#include "sero/stats.hpp"
#include "sero/vaccination.hpp"

namespace sero {

inline constexpr const char* kVersion = "1.0.0";

// ---------------------------------------------------------------------------
// Configuration.

struct PipelineConfig {
  std::filesystem::path data_dir;
  std::filesystem::path catalog;
  mcmc::ChainConfig mcmc;
  int delta = kDefaultDelta;
  double accuracy_concentration = kDefaultAccuracyConcentration;
  std::size_t theta_v_pool = 200;
  std::filesystem::path out_dir;
  int stride = 1;
  std::size_t draws = 400;
  bool svg = true;
  bool allow_monotonic_repair = false;
  bool joint = false;

  /// Settings that shape results; paths are left out so runs in different
  /// directories stay comparable.
  nlohmann::json to_json() const {
    return {{"mcmc", mcmc.to_json()},
            {"model",
             {{"delta", delta},
              {"accuracy_concentration", accuracy_concentration},
              {"theta_v_pool", theta_v_pool},
              {"joint", joint}}},
            {"output", {{"stride", stride}, {"draws", draws}, {"svg", svg}}},
            {"allow_monotonic_repair", allow_monotonic_repair}};
  }
};

namespace detail {

inline const nlohmann::json& require_key(const nlohmann::json& j, const std::string& section, const std::string& key) {
  const std::string name = section.empty() ? key : section + "." + key;
  if (!j.is_object() || !j.contains(key)) throw Error(ErrorCode::Config, "missing config key '" + name + "'");
  return j.at(key);
}

template <class T>
T get_as(const nlohmann::json& j, const std::string& section, const std::string& key) {
  const auto& v = require_key(j, section, key);
  try {
    return v.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorCode::Config, "config key '" + section + "." + key + "' has the wrong type");
  }
}

template <class T>
T get_or(const nlohmann::json& j, const std::string& section, const std::string& key, T fallback) {
  if (!j.is_object() || !j.contains(key)) return fallback;
  return get_as<T>(j, section, key);
}

}  // namespace detail

inline PipelineConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  using detail::get_as;
  using detail::get_or;
  using detail::require_key;
  PipelineConfig cfg;
  const auto& paths = require_key(j, "", "paths");
  const auto& mc = require_key(j, "", "mcmc");
  const auto& model = require_key(j, "", "model");
  const auto& output = require_key(j, "", "output");
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  };
  cfg.data_dir = resolve(get_as<std::string>(paths, "paths", "data"));
  cfg.catalog = resolve(get_as<std::string>(paths, "paths", "catalog"));
  cfg.mcmc.n_chains = get_as<int>(mc, "mcmc", "chains");
  cfg.mcmc.n_iter = get_as<int>(mc, "mcmc", "iters");
  cfg.mcmc.n_burnin = get_as<int>(mc, "mcmc", "burnin");
  cfg.mcmc.seed = get_as<std::uint64_t>(mc, "mcmc", "seed");
  cfg.mcmc.adapt_window = get_or<int>(mc, "mcmc", "adapt_window", cfg.mcmc.adapt_window);
  cfg.delta = get_as<int>(model, "model", "delta");
  cfg.accuracy_concentration = get_as<double>(model, "model", "accuracy_concentration");
  cfg.theta_v_pool = get_or<std::size_t>(model, "model", "theta_v_pool", cfg.theta_v_pool);
  cfg.joint = get_or<bool>(model, "model", "joint", cfg.joint);
  cfg.out_dir = resolve(get_as<std::string>(output, "output", "dir"));
  cfg.stride = get_or<int>(output, "output", "stride", cfg.stride);
  cfg.draws = get_or<std::size_t>(output, "output", "draws", cfg.draws);
  cfg.svg = get_or<bool>(output, "output", "svg", cfg.svg);
  cfg.mcmc.validate();
  if (cfg.delta < 1) throw Error(ErrorCode::Config, "model.delta must be positive");
  if (!(cfg.accuracy_concentration > 0.0)) throw Error(ErrorCode::Config, "model.accuracy_concentration must be positive");
  if (cfg.stride < 1) throw Error(ErrorCode::Config, "output.stride must be positive");
  if (cfg.draws < 1 || cfg.theta_v_pool < 1) throw Error(ErrorCode::Config, "draw counts must be positive");
  return cfg;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::Config, path.string() + ": " + e.what());
  }
  return parse_config(j, path.parent_path());
}

// ---------------------------------------------------------------------------
// World aggregation and exports.

struct CountryDraws {
  std::string code;
  double population = 0.0;
  std::vector<std::vector<double>> theta_v;  // [draw][date]
  std::vector<std::vector<double>> theta_i;  // [draw][date]
};

struct WorldTrend {
  std::vector<Day> dates;
  std::vector<std::vector<double>> theta_v, theta_i, theta;  // [date][draw]
  std::vector<stats::Summary> summary_v, summary_i, summary;
};

inline WorldTrend world_trend(const std::vector<CountryDraws>& countries, const std::vector<Day>& dates) {
  if (countries.empty()) throw Error(ErrorCode::MissingCountryDraws, "no countries to aggregate");
  const std::size_t n_draws = countries.front().theta_v.size();
  double total = 0.0;
  for (const auto& c : countries) {
    auto bad = [&](const std::vector<std::vector<double>>& d) {
      if (d.size() != n_draws || n_draws == 0) return true;
      for (const auto& row : d)
        if (row.size() != dates.size()) return true;
      return false;
    };
    if (bad(c.theta_v) || bad(c.theta_i))
      throw Error(ErrorCode::MissingCountryDraws, "country " + c.code + " lacks draws for some dates");
    total += c.population;
  }
  WorldTrend w;
  w.dates = dates;
  for (auto* m : {&w.theta_v, &w.theta_i, &w.theta}) m->assign(dates.size(), std::vector<double>(n_draws, 0.0));
  for (const auto& c : countries) {
    const double share = c.population / total;
    for (std::size_t d = 0; d < n_draws; ++d)
      for (std::size_t t = 0; t < dates.size(); ++t) {
        const double v = c.theta_v[d][t], i = c.theta_i[d][t];
        w.theta_v[t][d] += share * v;
        w.theta_i[t][d] += share * i;
        w.theta[t][d] += share * combine_seroprevalence(v, i);
      }
  }
  for (std::size_t t = 0; t < dates.size(); ++t) {
    w.summary_v.push_back(stats::summarize(w.theta_v[t]));
    w.summary_i.push_back(stats::summarize(w.theta_i[t]));
    w.summary.push_back(stats::summarize(w.theta[t]));
  }
  return w;
}

inline void write_trend_csv(std::ostream& out, const WorldTrend& w, const Corpus& corpus) {
  csv::write_row(out, {"date", "theta_v_mean", "theta_v_lo", "theta_v_hi", "theta_i_mean", "theta_i_lo", "theta_i_hi",
                       "theta_mean", "theta_lo", "theta_hi"});
  auto f = csv::format_double;
  for (std::size_t t = 0; t < w.dates.size(); ++t) {
    const auto &v = w.summary_v[t], &i = w.summary_i[t], &a = w.summary[t];
    csv::write_row(out, {corpus.date_text(w.dates[t]), f(v.mean), f(v.lo), f(v.hi), f(i.mean), f(i.lo), f(i.hi),
                         f(a.mean), f(a.lo), f(a.hi)});
  }
}

struct TreemapRecord {
  std::string country;
  double population = 0.0;
  double theta_mean = 0.0;
};

/// One record per country at date index `t`, largest population first.
inline std::vector<TreemapRecord> treemap_export(const std::vector<std::string>& codes,
                                                 const std::vector<double>& populations,
                                                 const std::vector<std::vector<double>>& theta_mean, std::size_t t) {
  std::vector<TreemapRecord> out;
  for (std::size_t c = 0; c < codes.size(); ++c) {
    if (t >= theta_mean.at(c).size()) throw Error(ErrorCode::DateOutOfRange, "treemap date outside the trend grid");
    const double v = theta_mean[c][t];
    if (!(v >= 0.0 && v <= 1.0))
      throw Error(ErrorCode::Internal, "seroprevalence for " + codes[c] + " outside [0, 1]: " + std::to_string(v));
    out.push_back({codes[c], populations[c], v});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const TreemapRecord& a, const TreemapRecord& b) { return a.population > b.population; });
  return out;
}

/// Static line chart: posterior mean with a shaded 95% band per series.
inline void write_trend_svg(std::ostream& out, const WorldTrend& w, const Corpus& corpus) {
  const double width = 720, height = 360, left = 50, right = 20, top = 20, bottom = 40;
  const double pw = width - left - right, ph = height - top - bottom;
  const std::size_t n = w.dates.size();
  double ymax = 0.05;
  for (const auto& s : w.summary) ymax = std::max(ymax, s.hi);
  ymax = std::ceil(ymax * 10.0) / 10.0;
  auto x = [&](std::size_t t) { return left + (n > 1 ? pw * static_cast<double>(t) / static_cast<double>(n - 1) : 0.0); };
  auto y = [&](double v) { return top + ph * (1.0 - v / ymax); };
  auto num = [](double v) {
    std::ostringstream s;
    s.precision(6);
    s << v;
    return s.str();
  };
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (int g = 0; g <= 5; ++g) {
    const double v = ymax * g / 5.0;
    out << "<line x1=\"" << left << "\" x2=\"" << left + pw << "\" y1=\"" << num(y(v)) << "\" y2=\"" << num(y(v))
        << "\" stroke=\"#ddd\"/>\n";
    out << "<text x=\"" << left - 6 << "\" y=\"" << num(y(v) + 4) << "\" text-anchor=\"end\">" << num(100.0 * v)
        << "%</text>\n";
  }
  struct Series {
    const std::vector<stats::Summary>* s;
    const char* colour;
    const char* label;
  };
  const Series series[] = {{&w.summary_v, "#1f77b4", "vaccination"},
                           {&w.summary_i, "#d62728", "infection"},
                           {&w.summary, "#2ca02c", "combined"}};
  int row = 0;
  for (const auto& sr : series) {
    std::string band, line;
    for (std::size_t t = 0; t < n; ++t) band += num(x(t)) + "," + num(y((*sr.s)[t].hi)) + " ";
    for (std::size_t t = n; t-- > 0;) band += num(x(t)) + "," + num(y((*sr.s)[t].lo)) + " ";
    for (std::size_t t = 0; t < n; ++t) line += num(x(t)) + "," + num(y((*sr.s)[t].mean)) + " ";
    out << "<polygon points=\"" << band << "\" fill=\"" << sr.colour << "\" fill-opacity=\"0.2\" stroke=\"none\"/>\n";
    out << "<polyline points=\"" << line << "\" fill=\"none\" stroke=\"" << sr.colour << "\" stroke-width=\"1.5\"/>\n";
    out << "<text x=\"" << left + 10 << "\" y=\"" << top + 14 + 14 * row << "\" fill=\"" << sr.colour << "\">"
        << sr.label << "</text>\n";
    ++row;
  }
  if (n > 0) {
    out << "<text x=\"" << left << "\" y=\"" << height - 12 << "\">" << corpus.date_text(w.dates.front()) << "</text>\n";
    out << "<text x=\"" << left + pw << "\" y=\"" << height - 12 << "\" text-anchor=\"end\">"
        << corpus.date_text(w.dates.back()) << "</text>\n";
  }
  out << "</svg>\n";
}

// ---------------------------------------------------------------------------
// Vaccination posterior predictive: one draw of every effective count M.

struct PropagationCounters {
  ImputeCounters impute;
  EffectiveCounters effective;
  std::size_t nonmonotone_splits = 0;
  std::size_t unsplittable = 0;

  nlohmann::json to_json() const {
    return {{"fully_draws", impute.draws},
            {"half_count_rounded", impute.half_rounded},
            {"fully_clamped", impute.clamped},
            {"zero_pace", impute.zero_pace},
            {"infeasible_fully_split", impute.infeasible_split},
            {"fully_split_lag_fallback", impute.lag_fallback},
            {"fully_split_failed", unsplittable},
            {"negative_partial_basis", effective.negative_partial},
            {"rounded_partial_basis", effective.rounded_partial},
            {"nonmonotone_imputed_splits", nonmonotone_splits}};
  }
};

struct VaccinationInputs {
  const Corpus* corpus = nullptr;
  DeliveryShares shares;
  AllocationWeights weights;
  ContextTable contexts;
  EfficacyFit efficacy;

  VaccinationInputs(const Corpus& c, int delta, EfficacyFit fit)
      : corpus(&c), shares(compute_delivery_shares(c)), weights(build_weights(c, shares)),
        contexts(recency_contexts(c, weights, shares, delta)), efficacy(std::move(fit)) {}
};

/// Effective counts M[i][j] for one posterior draw of the vaccination parameters.
template <class Rng>
std::vector<std::vector<std::int64_t>> simulate_effective_counts(const VaccinationInputs& in, double beta_v1,
                                                                 double beta0, double beta1, Rng& rng,
                                                                 PropagationCounters& counters) {
  const Corpus& c = *in.corpus;
  const std::size_t K = c.catalog.size();
  std::vector<double> ef(K), ep(K);
  for (std::size_t k = 0; k < K; ++k) {
    ef[k] = in.efficacy.full_by_vaccine[k].sample(rng);
    ep[k] = in.efficacy.partial_by_vaccine[k].sample(rng);
  }
  const auto x = impute_all_doses(c, in.weights, beta_v1, rng);
  counters.nonmonotone_splits += nonmonotone_splits(x).size();
  std::vector<std::vector<std::int64_t>> m(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    const auto& reports = c.countries[i].reports;
    const auto dates = c.report_dates(i);
    for (std::size_t j = 0; j < reports.size(); ++j) {
      const auto& r = reports[j];
      const std::int64_t y =
          r.cum_fully ? *r.cum_fully : impute_fully(r.cum_doses, in.contexts[i][j], beta0, beta1, rng, &counters.impute);
      std::vector<std::int64_t> yk;
      try {
        auto split = split_fully_by_vaccine(y, std::span(x[i]), j, std::span(dates), c.catalog, rng);
        counters.impute.infeasible_split += split.infeasible;
        counters.impute.lag_fallback += split.lag_fallback;
        yk = std::move(split.counts);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::ZeroLaggedDoses) throw;
        ++counters.unsplittable;
        yk.assign(K, 0);
        for (std::size_t k = 0; k < K; ++k)
          if (c.catalog.doses(k) == 1) yk[k] = x[i][j][k];
      }
      m[i].push_back(sample_effective_count(x[i][j], yk, ef, ep, c.catalog, rng, &counters.effective).m);
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Stages.

enum class Stage { Ingest, FitAllocation, FitCompletion, FitEfficacy, FitInfection, Predict, Aggregate, Report };

inline const std::vector<std::pair<std::string, Stage>>& stage_names() {
  static const std::vector<std::pair<std::string, Stage>> names = {
      {"ingest", Stage::Ingest},           {"fit-allocation", Stage::FitAllocation},
      {"fit-completion", Stage::FitCompletion}, {"fit-efficacy", Stage::FitEfficacy},
      {"fit-infection", Stage::FitInfection},   {"predict", Stage::Predict},
      {"aggregate", Stage::Aggregate},     {"report", Stage::Report}};
  return names;
}

inline std::string to_string(Stage s) {
  for (const auto& [name, stage] : stage_names())
    if (stage == s) return name;
  return "unknown";
}

namespace detail {

// Per-stage tags keep random streams of different stages apart.
inline constexpr std::uint64_t kTagPool = 0x9001, kTagPredict = 0x9002, kTagPredictInfection = 0x9003;

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << text;
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

inline nlohmann::json read_json(const std::filesystem::path& path) { return nlohmann::json::parse(read_file(path)); }

inline void require_stage(const std::filesystem::path& marker, Stage needed) {
  if (!std::filesystem::exists(marker))
    throw Error(ErrorCode::Io, "stage '" + to_string(needed) + "' has not been run (missing " + marker.string() + ")");
}

inline Corpus load_ingested(const PipelineConfig& cfg) {
  const auto dir = cfg.out_dir / "ingest";
  require_stage(dir / "validation.json", Stage::Ingest);
  return ingest_corpus(corpus_paths_in(dir / "corpus"), load_catalog(dir / "vaccine_catalog.csv"));
}

inline std::vector<std::string> country_codes(const Corpus& c) {
  std::vector<std::string> out;
  for (const auto& country : c.countries) out.push_back(country.code);
  return out;
}

inline nlohmann::json summarize_store(const mcmc::PosteriorStore& store) {
  nlohmann::json params = nlohmann::json::object();
  for (std::size_t p = 0; p < store.names.size(); ++p) {
    if (!store.reported[p]) continue;
    const auto s = stats::summarize(store.columns[p]);
    const auto d = store.diagnostics(p);
    nlohmann::json entry = {{"mean", s.mean}, {"lo", s.lo}, {"hi", s.hi}, {"ess", d.ess}};
    entry["rhat"] = std::isnan(d.rhat) ? nlohmann::json(nullptr) : nlohmann::json(d.rhat);
    if (d.degenerate) entry["degenerate"] = true;
    params[store.names[p]] = entry;
  }
  return {{"parameters", params}, {"draws", store.total_draws()}, {"sampler", store.info}};
}

inline nlohmann::json refs_json(const Corpus& c, const std::vector<ReportRef>& refs) {
  auto out = nlohmann::json::array();
  for (const auto& r : refs)
    out.push_back({{"country", c.countries[r.country].code}, {"date", c.date_text(c.countries[r.country].reports[r.report].date)}});
  return out;
}

/// `k` evenly spaced indices into `total` pooled draws.
inline std::vector<std::size_t> thin_indices(std::size_t total, std::size_t k) {
  std::vector<std::size_t> out;
  k = std::min(k, total);
  for (std::size_t n = 0; n < k; ++n) out.push_back(n * total / k);
  return out;
}

struct VaccinationPosterior {
  mcmc::PosteriorStore allocation, completion;
  EfficacyFit efficacy;
};

inline VaccinationPosterior load_vaccination_posterior(const PipelineConfig& cfg) {
  const auto& out = cfg.out_dir;
  require_stage(out / "allocation/posterior/manifest.json", Stage::FitAllocation);
  require_stage(out / "completion/posterior/manifest.json", Stage::FitCompletion);
  require_stage(out / "efficacy/efficacy.json", Stage::FitEfficacy);
  return {mcmc::PosteriorStore::load(out / "allocation/posterior"),
          mcmc::PosteriorStore::load(out / "completion/posterior"), EfficacyFit{}};
}

inline std::vector<Day> trend_days(const Corpus& c, int stride) {
  std::vector<Day> days;
  for (Day t = 0; t <= c.last_day; t += stride) days.push_back(t);
  if (days.back() != c.last_day) days.push_back(c.last_day);
  return days;
}

inline void write_f64(const std::filesystem::path& path, const std::vector<double>& values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
}

inline std::vector<double> read_f64(const std::filesystem::path& path, std::size_t n) {
  const auto bytes = read_file(path);
  if (bytes.size() != n * sizeof(double)) throw Error(ErrorCode::Io, path.string() + " has unexpected size");
  std::vector<double> out(n);
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

}  // namespace detail

inline void stage_ingest(const PipelineConfig& cfg) {
  const auto dir = cfg.out_dir / "ingest";
  std::filesystem::create_directories(dir);
  const auto catalog = load_catalog(cfg.catalog);
  Corpus corpus;
  try {
    corpus = ingest_corpus(corpus_paths_in(cfg.data_dir), catalog, {cfg.allow_monotonic_repair});
  } catch (const IngestError& e) {
    detail::write_json(dir / "validation.json", e.report().to_json());
    throw;
  }
  detail::write_json(dir / "validation.json", corpus.report.to_json());
  write_corpus(corpus, dir / "corpus");
  std::ostringstream cat;
  write_catalog(catalog, cat);
  detail::write_text(dir / "vaccine_catalog.csv", cat.str());
  std::size_t reports = 0;
  for (const auto& c : corpus.countries) reports += c.reports.size();
  detail::write_json(dir / "summary.json", {{"countries", corpus.size()},
                                            {"reports", reports},
                                            {"surveys", corpus.surveys.size()},
                                            {"trials", corpus.trials.size()},
                                            {"first_date", corpus.date_text(0)},
                                            {"last_date", corpus.date_text(corpus.last_day)},
                                            {"covariates", standardize_covariates(corpus.countries).constants()}});
}

inline void stage_fit_allocation(const PipelineConfig& cfg) {
  const auto corpus = detail::load_ingested(cfg);
  const auto dir = cfg.out_dir / "allocation";
  AllocationModel model(corpus, compute_delivery_shares(corpus));
  std::ostringstream diag;
  write_allocation_diagnostics(diag, corpus, model.weights());
  detail::write_text(dir / "diagnostics.csv", diag.str());
  const auto store = mcmc::run_chains(model, cfg.mcmc);
  store.save(dir / "posterior");
  auto summary = detail::summarize_store(store);
  summary["rows"] = model.n_rows();
  summary["excluded_off_support"] = detail::refs_json(corpus, model.excluded());
  summary["propriety_witness"] = detail::refs_json(corpus, {*model.theorem1().witness});
  detail::write_json(dir / "summary.json", summary);
}

inline void stage_fit_completion(const PipelineConfig& cfg) {
  const auto corpus = detail::load_ingested(cfg);
  const auto dir = cfg.out_dir / "completion";
  const auto shares = compute_delivery_shares(corpus);
  const auto contexts = recency_contexts(corpus, build_weights(corpus, shares), shares, cfg.delta);
  std::ostringstream dump;
  write_context_dump(dump, corpus, contexts);
  detail::write_text(dir / "contexts.csv", dump.str());
  CompletionModel model(completion_rows(corpus, contexts));
  const auto store = mcmc::run_chains(model, cfg.mcmc);
  store.save(dir / "posterior");
  auto summary = detail::summarize_store(store);
  summary["rows"] = model.data().rows.size();
  summary["pure_type1_rows"] = model.data().pure_type1.size();
  summary["excluded"] = detail::refs_json(corpus, model.data().excluded);
  detail::write_json(dir / "summary.json", summary);
}

inline void stage_fit_efficacy(const PipelineConfig& cfg) {
  const auto corpus = detail::load_ingested(cfg);
  const auto fit = fit_efficacy(corpus.trials, corpus.catalog);
  detail::write_json(cfg.out_dir / "efficacy/efficacy.json", fit.to_json());
}

/// Prior draws of theta_V at every survey, from the vaccination posterior.
inline std::vector<std::vector<double>> theta_v_pools(const PipelineConfig& cfg, const Corpus& corpus,
                                                      PropagationCounters& counters) {
  auto vp = detail::load_vaccination_posterior(cfg);
  VaccinationInputs inputs(corpus, cfg.delta, fit_efficacy(corpus.trials, corpus.catalog));
  const auto& bv = vp.allocation.pooled("beta_v1");
  const auto& b0 = vp.completion.pooled("beta0_v2");
  const auto& b1 = vp.completion.pooled("beta1_v2");
  const auto ia = detail::thin_indices(bv.size(), cfg.theta_v_pool);
  const auto ic = detail::thin_indices(b0.size(), cfg.theta_v_pool);
  const std::size_t n = std::min(ia.size(), ic.size());
  std::vector<std::vector<double>> pools(corpus.surveys.size());
  for (std::size_t d = 0; d < n; ++d) {
    CounterRng rng(cfg.mcmc.seed, {detail::kTagPool, d});
    const auto m = simulate_effective_counts(inputs, bv[ia[d]], b0[ic[d]], b1[ic[d]], rng, counters);
    for (std::size_t s = 0; s < corpus.surveys.size(); ++s) {
      const auto& sv = corpus.surveys[s];
      const auto dates = corpus.report_dates(sv.country);
      pools[s].push_back(theta_v(dates, m[sv.country], corpus.countries[sv.country].population, sv.end_date));
    }
  }
  return pools;
}

inline void stage_fit_infection(const PipelineConfig& cfg) {
  const auto corpus = detail::load_ingested(cfg);
  const auto dir = cfg.out_dir / "infection";
  PropagationCounters counters;
  const auto pools = theta_v_pools(cfg, corpus, counters);
  InfectionOptions opt;
  opt.joint = cfg.joint;
  opt.accuracy_concentration = cfg.accuracy_concentration;
  const auto cov = standardize_covariates(corpus.countries);
  InfectionModel model(infection_data(corpus, cov, pools, opt), detail::country_codes(corpus), opt);
  const auto store = mcmc::run_chains(model, cfg.mcmc);
  store.save(dir / "posterior");
  auto summary = detail::summarize_store(store);
  auto excluded = nlohmann::json::array();
  for (auto s : model.data().excluded)
    excluded.push_back({{"country", corpus.countries[corpus.surveys[s].country].code},
                        {"date", corpus.date_text(corpus.surveys[s].end_date)}});
  summary["excluded_no_confirmed_cases"] = excluded;
  summary["survey_countries"] = model.data().countries.size();
  summary["theta_v"] = cfg.joint ? "joint" : "cut";
  summary["theta_v_imputation"] = counters.to_json();
  auto surveys = nlohmann::json::array();
  for (std::size_t l = 0; l < model.data().surveys.size(); ++l) {
    const auto& s = model.data().surveys[l];
    surveys.push_back({{"index", l},
                       {"country", corpus.countries[s.country].code},
                       {"date", corpus.date_text(s.date)},
                       {"theta_c", s.theta_c},
                       {"theta_v_prior_mean", s.theta_v_pool.empty() ? 0.0 : stats::mean(s.theta_v_pool)}});
  }
  summary["surveys"] = surveys;
  detail::write_json(dir / "summary.json", summary);
}

inline void stage_predict(const PipelineConfig& cfg) {
  const auto corpus = detail::load_ingested(cfg);
  const auto dir = cfg.out_dir / "predict";
  auto vp = detail::load_vaccination_posterior(cfg);
  detail::require_stage(cfg.out_dir / "infection/posterior/manifest.json", Stage::FitInfection);
  const auto inf_store = mcmc::PosteriorStore::load(cfg.out_dir / "infection/posterior");
  const auto codes = detail::country_codes(corpus);
  const auto cov = standardize_covariates(corpus.countries);
  InfectionOptions opt;
  opt.accuracy_concentration = cfg.accuracy_concentration;
  // Survey-country membership only; theta_V pools are not needed here.
  const auto idata = infection_data(corpus, cov, {}, opt);
  const auto idraws = infection_draws(inf_store, idata, codes);
  VaccinationInputs inputs(corpus, cfg.delta, fit_efficacy(corpus.trials, corpus.catalog));

  const auto& bv = vp.allocation.pooled("beta_v1");
  const auto& b0 = vp.completion.pooled("beta0_v2");
  const auto& b1 = vp.completion.pooled("beta1_v2");
  const auto ii = detail::thin_indices(idraws.size(), cfg.draws);
  const std::size_t n = ii.size();
  const auto ia = detail::thin_indices(bv.size(), n);
  const auto ic = detail::thin_indices(b0.size(), n);
  const auto days = detail::trend_days(corpus, cfg.stride);
  const Day horizon = days.back();
  const std::size_t C = corpus.size(), T = days.size();

  // Layout: [country][draw][date].
  std::vector<double> tv(C * n * T, 0.0), ti(C * n * T, 0.0);
  PropagationCounters counters;
  for (std::size_t d = 0; d < n; ++d) {
    CounterRng rng(cfg.mcmc.seed, {detail::kTagPredict, d});
    const auto m = simulate_effective_counts(inputs, bv[ia[d % ia.size()]], b0[ic[d % ic.size()]], b1[ic[d % ic.size()]],
                                             rng, counters);
    for (std::size_t i = 0; i < C; ++i) {
      const auto dates = corpus.report_dates(i);
      CounterRng irng(cfg.mcmc.seed, {detail::kTagPredictInfection, d, i});
      const auto th = predict_theta_i(corpus, cov, i, days, idraws[ii[d]], horizon, irng);
      for (std::size_t t = 0; t < T; ++t) {
        const std::size_t at = (i * n + d) * T + t;
        tv[at] = theta_v(dates, m[i], corpus.countries[i].population, days[t]);
        ti[at] = th[t];
      }
    }
  }
  std::filesystem::create_directories(dir);
  detail::write_f64(dir / "theta_v.f64", tv);
  detail::write_f64(dir / "theta_i.f64", ti);
  auto jdays = nlohmann::json::array();
  for (Day t : days) jdays.push_back(corpus.date_text(t));
  detail::write_json(dir / "manifest.json", {{"format", "sero-predict-v1"},
                                             {"layout", "float64 little-endian, index (country * draws + draw) * dates + date"},
                                             {"countries", codes},
                                             {"draws", n},
                                             {"dates", jdays},
                                             {"files", {"theta_v.f64", "theta_i.f64"}},
                                             {"imputation", counters.to_json()}});
}

struct Predictions {
  std::vector<std::string> codes;
  std::vector<Day> days;
  std::size_t draws = 0;
  std::vector<CountryDraws> countries;
  nlohmann::json imputation;
};

inline Predictions load_predictions(const PipelineConfig& cfg, const Corpus& corpus) {
  const auto dir = cfg.out_dir / "predict";
  detail::require_stage(dir / "manifest.json", Stage::Predict);
  const auto man = detail::read_json(dir / "manifest.json");
  Predictions p;
  p.codes = man.at("countries").get<std::vector<std::string>>();
  p.draws = man.at("draws").get<std::size_t>();
  p.imputation = man.at("imputation");
  for (const auto& d : man.at("dates")) p.days.push_back(static_cast<Day>((parse_iso_date(d.get<std::string>()) - corpus.epoch).count()));
  const std::size_t C = p.codes.size(), n = p.draws, T = p.days.size();
  const auto tv = detail::read_f64(dir / "theta_v.f64", C * n * T);
  const auto ti = detail::read_f64(dir / "theta_i.f64", C * n * T);
  for (std::size_t i = 0; i < C; ++i) {
    auto idx = corpus.country_index(p.codes[i]);
    if (!idx) throw Error(ErrorCode::MissingCountryDraws, "prediction for unknown country " + p.codes[i]);
    CountryDraws cd{p.codes[i], corpus.countries[*idx].population, {}, {}};
    for (std::size_t d = 0; d < n; ++d) {
      const auto at = (i * n + d) * T;
      cd.theta_v.emplace_back(tv.begin() + static_cast<std::ptrdiff_t>(at), tv.begin() + static_cast<std::ptrdiff_t>(at + T));
      cd.theta_i.emplace_back(ti.begin() + static_cast<std::ptrdiff_t>(at), ti.begin() + static_cast<std::ptrdiff_t>(at + T));
    }
    p.countries.push_back(std::move(cd));
  }
  if (p.countries.size() != corpus.size())
    throw Error(ErrorCode::MissingCountryDraws, "predictions cover " + std::to_string(p.countries.size()) + " of " +
                                                    std::to_string(corpus.size()) + " countries");
  return p;
}

inline void stage_aggregate(const PipelineConfig& cfg) {
  const auto corpus = detail::load_ingested(cfg);
  const auto pred = load_predictions(cfg, corpus);
  const auto trend = world_trend(pred.countries, pred.days);
  std::ostringstream csv_out;
  write_trend_csv(csv_out, trend, corpus);
  detail::write_text(cfg.out_dir / "trend.csv", csv_out.str());

  const std::size_t T = pred.days.size();
  std::vector<std::vector<double>> theta_mean(pred.countries.size());
  std::vector<double> populations;
  auto summary = nlohmann::json::array();
  for (std::size_t i = 0; i < pred.countries.size(); ++i) {
    const auto& c = pred.countries[i];
    populations.push_back(c.population);
    for (std::size_t t = 0; t < T; ++t) {
      double acc = 0.0;
      for (std::size_t d = 0; d < pred.draws; ++d) acc += combine_seroprevalence(c.theta_v[d][t], c.theta_i[d][t]);
      theta_mean[i].push_back(acc / static_cast<double>(pred.draws));
    }
    std::vector<double> v, in, all;
    for (std::size_t d = 0; d < pred.draws; ++d) {
      v.push_back(c.theta_v[d][T - 1]);
      in.push_back(c.theta_i[d][T - 1]);
      all.push_back(combine_seroprevalence(v.back(), in.back()));
    }
    auto js = [](const stats::Summary& s) { return nlohmann::json{{"mean", s.mean}, {"lo", s.lo}, {"hi", s.hi}}; };
    summary.push_back({{"country", c.code},
                       {"population", c.population},
                       {"date", corpus.date_text(pred.days.back())},
                       {"theta_v", js(stats::summarize(v))},
                       {"theta_i", js(stats::summarize(in))},
                       {"theta", js(stats::summarize(all))}});
  }
  detail::write_json(cfg.out_dir / "country_summary.json", summary);

  std::ostringstream tm;
  csv::write_row(tm, {"country", "population", "theta_mean", "date"});
  for (const auto& r : treemap_export(pred.codes, populations, theta_mean, T - 1))
    csv::write_row(tm, {r.country, csv::format_double(r.population), csv::format_double(r.theta_mean),
                        corpus.date_text(pred.days.back())});
  detail::write_text(cfg.out_dir / "treemap.csv", tm.str());
  if (cfg.svg) {
    std::ostringstream svg;
    write_trend_svg(svg, trend, corpus);
    detail::write_text(cfg.out_dir / "trend.svg", svg.str());
  }
}

namespace detail {

inline std::string pct(double v) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(1);
  s << 100.0 * v << "%";
  return s.str();
}

inline std::string fixed(double v, int digits = 3) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

inline void parameter_table(std::ostream& out, const nlohmann::json& summary, const std::vector<std::string>& only = {}) {
  out << "| parameter | mean | 95% interval | R-hat | ESS |\n|---|---|---|---|---|\n";
  for (const auto& [name, p] : summary.at("parameters").items()) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    out << "| " << name << " | " << fixed(p["mean"]) << " | [" << fixed(p["lo"]) << ", " << fixed(p["hi"]) << "] | "
        << (p["rhat"].is_null() ? std::string("n/a") : fixed(p["rhat"])) << " | " << fixed(p["ess"], 0) << " |\n";
  }
}

}  // namespace detail

inline void stage_report(const PipelineConfig& cfg) {
  namespace fs = std::filesystem;
  const auto corpus = detail::load_ingested(cfg);
  const auto& out = cfg.out_dir;
  detail::require_stage(out / "trend.csv", Stage::Aggregate);
  const auto ingest = detail::read_json(out / "ingest/summary.json");
  const auto alloc = detail::read_json(out / "allocation/summary.json");
  const auto comp = detail::read_json(out / "completion/summary.json");
  const auto eff = detail::read_json(out / "efficacy/efficacy.json");
  const auto inf = detail::read_json(out / "infection/summary.json");
  const auto pred = detail::read_json(out / "predict/manifest.json");
  const auto countries = detail::read_json(out / "country_summary.json");

  std::ostringstream md;
  md << "# Seroprevalence run report\n\n";
  md << "Corpus: " << ingest["countries"] << " countries, " << ingest["reports"] << " vaccination reports, "
     << ingest["surveys"] << " serosurveys, " << ingest["trials"] << " trial arms, from "
     << ingest["first_date"].get<std::string>() << " to " << ingest["last_date"].get<std::string>() << ".\n\n";
  md << "Sampler: " << cfg.mcmc.n_chains << " chains of " << cfg.mcmc.n_iter << " iterations, " << cfg.mcmc.n_burnin
     << " burn-in, seed " << cfg.mcmc.seed << ".\n\n";

  {
    std::ifstream trend(out / "trend.csv");
    std::string header, line, last;
    std::getline(trend, header);
    while (std::getline(trend, line))
      if (!line.empty()) last = line;
    std::vector<std::string> cells = csv::split_line(last);
    if (cells.size() == 10) {
      auto p = [&](int c) { return detail::pct(std::stod(cells[c])); };
      md << "## World estimate on " << cells[0] << "\n\n";
      md << "| quantity | mean | 95% interval |\n|---|---|---|\n";
      md << "| vaccination | " << p(1) << " | [" << p(2) << ", " << p(3) << "] |\n";
      md << "| infection | " << p(4) << " | [" << p(5) << ", " << p(6) << "] |\n";
      md << "| combined | " << p(7) << " | [" << p(8) << ", " << p(9) << "] |\n\n";
    }
  }

  md << "## Dose allocation\n\n";
  detail::parameter_table(md, alloc);
  md << "\n" << alloc["rows"] << " reports with a per-vaccine split enter the likelihood; "
     << alloc["excluded_off_support"].size() << " were excluded for positive counts outside the vaccines in use.\n\n";

  md << "## Schedule completion\n\n";
  detail::parameter_table(md, comp);
  md << "\n" << comp["rows"] << " reports enter the likelihood, " << comp["pure_type1_rows"]
     << " single-dose-only reports are consistent by construction, and " << comp["excluded"].size()
     << " were excluded (first report of a country, or an undefined dosing pace).\n\n";

  md << "## Vaccine efficacy\n\n";
  md << "Hyperparameters are empirical Bayes plug-in estimates; their uncertainty is not propagated.\n\n";
  md << "| group | alpha | beta | prior mean |\n|---|---|---|---|\n";
  for (const auto& [g, h] : eff["groups"].items())
    md << "| " << g << " | " << detail::fixed(h["alpha"]) << " | " << detail::fixed(h["beta"]) << " | "
       << detail::fixed(h["alpha"].get<double>() / (h["alpha"].get<double>() + h["beta"].get<double>())) << " |\n";
  md << "\n| trial | stage | group | crude | posterior mean | 95% interval |\n|---|---|---|---|---|---|\n";
  for (const auto& t : eff["trials"])
    md << "| " << t["manufacturer"].get<std::string>() << " | " << t["dose"] << " | " << t["group"].get<std::string>()
       << " | " << detail::fixed(t["crude"]) << " | " << detail::fixed(t["mean"]) << " | [" << detail::fixed(t["q025"])
       << ", " << detail::fixed(t["q975"]) << "] |\n";
  md << "\nVaccines without trial data use the fitted group Beta distribution.\n\n";

  md << "## Infection\n\n";
  detail::parameter_table(md, inf, {"mu0", "sigma", "tau", "beta1_i", "beta2_i"});
  md << "\n" << inf["survey_countries"] << " survey countries; " << inf["excluded_no_confirmed_cases"].size()
     << " surveys dropped for having no confirmed cases by their date. Vaccination seroprevalence enters the fit as "
     << (inf["theta_v"] == "joint" ? "a latent quantity updated against the survey likelihood"
                                   : "a fresh prior draw each iteration (two-pass)")
     << ".\n\n";

  double worst_rhat = 1.0, worst_ess = std::numeric_limits<double>::infinity();
  for (const auto* s : {&alloc, &comp, &inf})
    for (const auto& [name, p] : (*s)["parameters"].items()) {
      if (!p["rhat"].is_null()) worst_rhat = std::max(worst_rhat, p["rhat"].get<double>());
      if (!p.contains("degenerate")) worst_ess = std::min(worst_ess, p["ess"].get<double>());
    }
  md << "## Convergence\n\nLargest R-hat over reported parameters: " << detail::fixed(worst_rhat)
     << "; smallest effective sample size: " << detail::fixed(worst_ess, 0) << ".\n\n";

  md << "## Imputation log\n\n| event | count |\n|---|---|\n";
  for (const auto& [k, v] : pred["imputation"].items()) md << "| " << k << " | " << v << " |\n";
  md << "\n## Modelling choices\n\n";
  md << "- Sensitivity and specificity carry Beta(hits + 1, misses + 1) priors from validation counts; a reported "
        "fixed value v becomes Beta(c v, c (1 - v)) with c = "
     << cfg.accuracy_concentration << ".\n";
  md << "- Each posterior draw uses one infection-to-confirmed log ratio per country, truncated at the last trend "
        "date, so trajectories are nondecreasing and never exceed 1.\n";
  md << "- Countries without vaccination reports contribute zero vaccination seroprevalence but keep their population "
        "in the world denominator.\n";
  md << "- Survey dates are the end of the sampling period.\n";
  md << "- Imputed per-vaccine cumulative doses are drawn independently per report and may decrease between "
        "reports; such draws are counted above, not repaired.\n";
  md << "\nPer-country estimates for the last trend date are in `country_summary.json` (" << countries.size()
     << " countries).\n";
  detail::write_text(out / "report.md", md.str());

  // Manifest: hashes of every emitted file, in path order.
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(out))
    if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
  for (const auto& e : fs::recursive_directory_iterator(out))
    if (e.is_regular_file() && e.path().filename() == "manifest.json" && e.path().parent_path() != out)
      files.push_back(e.path());
  std::vector<std::string> rel;
  for (const auto& f : files) rel.push_back(fs::relative(f, out).generic_string());
  std::sort(rel.begin(), rel.end());
  nlohmann::json outputs = nlohmann::json::object();
  for (const auto& r : rel) outputs[r] = file_hash(out / r);
  nlohmann::json inputs = nlohmann::json::object();
  const auto paths = corpus_paths_in(cfg.data_dir);
  for (const auto& p : {paths.vaccination, paths.delivery, paths.trials, paths.surveys, paths.countries})
    inputs[p.filename().string()] = file_hash(p);
  inputs["vaccine_catalog"] = file_hash(cfg.catalog);
  for (const auto& c : corpus.countries)
    if (!c.confirmed_ref.empty() && !inputs.contains(c.confirmed_ref))
      inputs[c.confirmed_ref] = file_hash(cfg.data_dir / c.confirmed_ref);
  detail::write_json(out / "manifest.json", {{"format", "sero-run-v1"},
                                             {"version", kVersion},
                                             {"compiler", __VERSION__},
                                             {"config", cfg.to_json()},
                                             {"seed", cfg.mcmc.seed},
                                             {"inputs", inputs},
                                             {"outputs", outputs}});
}

inline void run_stage(Stage s, const PipelineConfig& cfg) {
  try {
    switch (s) {
      case Stage::Ingest: return stage_ingest(cfg);
      case Stage::FitAllocation: return stage_fit_allocation(cfg);
      case Stage::FitCompletion: return stage_fit_completion(cfg);
      case Stage::FitEfficacy: return stage_fit_efficacy(cfg);
      case Stage::FitInfection: return stage_fit_infection(cfg);
      case Stage::Predict: return stage_predict(cfg);
      case Stage::Aggregate: return stage_aggregate(cfg);
      case Stage::Report: return stage_report(cfg);
    }
  } catch (const IngestError& e) {
    throw IngestError(e.code(), to_string(s) + ": " + e.message(), e.report());
  } catch (const Error& e) {
    throw Error(e.code(), to_string(s) + ": " + e.message());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Io, to_string(s) + ": malformed stage output: " + e.what());
  }
}

inline void run_all(const PipelineConfig& cfg) {
  for (const auto& [name, stage] : stage_names()) run_stage(stage, cfg);
}

}  // namespace sero
