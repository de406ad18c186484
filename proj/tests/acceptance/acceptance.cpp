// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance [--cli <path to sero>] [--only N[,N...]]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/tools/minima.hpp>
#include <nlohmann/json.hpp>

#include "sero/allocation.hpp"
#include "sero/completion.hpp"
#include "sero/corpus.hpp"
#include "sero/csv.hpp"
#include "sero/efficacy.hpp"
#include "sero/hash.hpp"
#include "sero/infection.hpp"
#include "sero/mcmc.hpp"
#include "sero/pipeline.hpp"
#include "sero/synthetic.hpp"
#include "sero/vaccination.hpp"
#include "support/oracles.hpp"
#include "support/temp_dir.hpp"

using namespace sero;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = SERO_SOURCE_DIR;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::vector<std::string> codes(const Corpus& c) {
  std::vector<std::string> out;
  for (const auto& country : c.countries) out.push_back(country.code);
  return out;
}

bool covers(const mcmc::PosteriorStore& store, const std::string& name, double truth) {
  const auto s = stats::summarize(store.pooled(name));
  return s.lo <= truth && truth <= s.hi;
}

// ---------------------------------------------------------------------------
// 1. Single survey, perfect test, no vaccination: MCMC against quadrature.

Outcome conjugate_oracle() {
  SyntheticOptions so;
  so.seed = 31;
  so.n_countries = 8;
  so.n_survey_countries = 6;
  so.vaccination = false;
  auto c = generate_synthetic(so).corpus;
  c.surveys.resize(1);
  auto& sv = c.surveys[0];
  sv.sensitivity = {std::nullopt, std::nullopt, 1.0};
  sv.specificity = {std::nullopt, std::nullopt, 1.0};
  const double tc = c.confirmed_ratio(sv.country, sv.end_date);
  sv.n_samples = 1500;
  sv.n_positive = static_cast<std::int64_t>(std::round(sv.n_samples * std::min(0.4, 3.0 * tc)));

  InfectionOptions opt;
  opt.collapse_hierarchy = true;
  opt.exact_fixed_accuracy = true;
  InfectionModel model(infection_data(c, standardize_covariates(c.countries), {}, opt), codes(c), opt);
  const auto store = mcmc::run_chains(model, {});
  auto draws = store.pooled("log_ratio.0");
  std::sort(draws.begin(), draws.end());

  // Posterior of r on (0, -log tc): binomial likelihood in tc e^r times the
  // Jacobian of a flat prior on theta_I.
  const double b = -std::log(tc);
  const std::int64_t n = sv.n_samples, x = sv.n_positive;
  auto logf = [&](double r) {
    const double p = tc * std::exp(r);
    return x * std::log(p) + (n - x) * std::log1p(-p) + r;
  };
  const std::size_t cells = 200000;
  const double h = b / cells;
  double peak = -1e300;
  for (std::size_t i = 0; i < cells; ++i) peak = std::max(peak, logf((i + 0.5) * h));
  std::vector<double> cdf(cells + 1, 0.0);
  for (std::size_t i = 0; i < cells; ++i) cdf[i + 1] = cdf[i] + std::exp(logf((i + 0.5) * h) - peak);
  for (auto& v : cdf) v /= cdf.back();
  auto F = [&](double r) {
    const double u = std::clamp(r / h, 0.0, static_cast<double>(cells));
    const auto i = std::min(static_cast<std::size_t>(u), cells - 1);
    return cdf[i] + (u - i) * (cdf[i + 1] - cdf[i]);
  };
  double ks = 0.0;
  const double m = static_cast<double>(draws.size());
  for (std::size_t i = 0; i < draws.size(); ++i) {
    const double f = F(draws[i]);
    ks = std::max({ks, std::abs(f - i / m), std::abs((i + 1) / m - f)});
  }
  return {ks < 0.05, "KS " + fmt("%.4f", ks) + " over " + std::to_string(draws.size()) + " draws (x=" +
                         std::to_string(x) + ", n=" + std::to_string(n) + ")"};
}

// ---------------------------------------------------------------------------
// 2. Efficacy posteriors on the bundled trial table.

std::vector<ClinicalTrial> bundled_trials() {
  const auto table = csv::read(kSource / "data/trials.csv");
  std::vector<ClinicalTrial> out;
  for (const auto& row : table.rows)
    out.push_back({row.cells[0], std::stoi(row.cells[1]), std::stoll(row.cells[2]), std::stoll(row.cells[3]),
                   std::stoll(row.cells[4]), std::stoll(row.cells[5])});
  return out;
}

Outcome efficacy_sanity() {
  const auto trials = bundled_trials();
  const auto fit = fit_efficacy(trials, load_catalog(kSource / "data/vaccine_catalog.csv"));
  double pfizer = -1.0, worst = 0.0;
  std::string worst_name;
  for (const auto& t : fit.trials) {
    if (t.manufacturer == "Pfizer" && t.dose_stage == 2) pfizer = t.mean;
    const double gap = std::abs(t.mean - t.crude);
    if (gap > worst) worst = gap, worst_name = t.manufacturer + " dose " + std::to_string(t.dose_stage);
  }
  const bool ok = pfizer >= 0.90 && pfizer <= 0.97 && worst <= 0.05 && fit.trials.size() == 9;
  return {ok, "Pfizer full " + fmt("%.4f", pfizer) + "; max |mean - crude| " + fmt("%.4f", worst) + " (" + worst_name +
                  ")"};
}

// ---------------------------------------------------------------------------
// 3. Efficacy posterior does not depend on the prior on the total case rate.

Outcome lambda_independence() {
  double worst = 0.0;
  std::string worst_name;
  for (const auto& t : bundled_trials()) {
    double means[2];
    int n = 0;
    for (auto [shape, rate] : {std::pair{1.0, 1.0}, std::pair{0.01, 0.01}}) {
      TrialPoissonModel m(t, 1.0, 1.0, shape, rate);
      mcmc::ChainConfig cfg;
      cfg.seed = 404;
      means[n++] = stats::mean(mcmc::run_chains(m, cfg).pooled("E"));
    }
    const double gap = std::abs(means[0] - means[1]);
    if (gap > worst) worst = gap, worst_name = t.manufacturer + " dose " + std::to_string(t.dose_stage);
  }
  return {worst < 0.01, "max |E mean difference| " + fmt("%.4f", worst) + " across 9 trials (" + worst_name + ")"};
}

// ---------------------------------------------------------------------------
// 4. Parameter recovery on simulated corpora.

Outcome recovery() {
  const SyntheticTruth truth;
  const int reps = 20;
  int alloc = 0, comp = 0, inf = 0;
  std::vector<std::string> misses;
  for (int s = 0; s < reps; ++s) {
    SyntheticOptions so;
    so.seed = 1000 + static_cast<std::uint64_t>(s);
    const auto c = generate_synthetic(so, truth).corpus;
    const auto shares = compute_delivery_shares(c);

    const auto a = mcmc::run_chains(AllocationModel(c, shares), {});
    if (covers(a, "beta_v1", truth.beta_v1)) ++alloc;
    else misses.push_back("allocation seed " + std::to_string(so.seed));

    const auto contexts = recency_contexts(c, build_weights(c, shares), shares);
    const auto b = mcmc::run_chains(CompletionModel(completion_rows(c, contexts)), {});
    if (covers(b, "beta0_v2", truth.beta0_v2) && covers(b, "beta1_v2", truth.beta1_v2)) ++comp;
    else misses.push_back("completion seed " + std::to_string(so.seed));

    SyntheticOptions io;
    io.seed = 2000 + static_cast<std::uint64_t>(s);
    io.n_countries = 40;
    io.n_survey_countries = 40;
    io.vaccination = false;
    const auto ic = generate_synthetic(io, truth).corpus;
    const auto st = mcmc::run_chains(
        InfectionModel(infection_data(ic, standardize_covariates(ic.countries), {}), codes(ic)), {});
    if (covers(st, "beta1_i", truth.beta1_i) && covers(st, "beta2_i", truth.beta2_i)) ++inf;
    else misses.push_back("infection seed " + std::to_string(io.seed));
  }
  std::string detail = "coverage allocation " + std::to_string(alloc) + "/20, completion " + std::to_string(comp) +
                       "/20, infection " + std::to_string(inf) + "/20";
  for (const auto& m : misses) std::cerr << "  miss: " << m << '\n';
  return {alloc >= 18 && comp >= 18 && inf >= 18, detail};
}

// ---------------------------------------------------------------------------
// 5. Propriety guards.

Corpus fixture_corpus() {
  return ingest_corpus(corpus_paths_in(kSource / "fixtures/synthetic/data"),
                       load_catalog(kSource / "fixtures/synthetic/vaccine_catalog.csv"));
}

bool refused(const mcmc::Model& m, std::string& message) {
  try {
    mcmc::ChainConfig cfg;
    cfg.n_iter = 10;
    cfg.n_burnin = 5;
    mcmc::run_chains(m, cfg);
  } catch (const Error& e) {
    message = e.message();
    return e.code() == ErrorCode::ProprietyViolation;
  }
  return false;
}

double maximize_1d(const std::function<double(double)>& f, double lo, double hi) {
  return boost::math::tools::brent_find_minima([&](double x) { return -f(x); }, lo, hi, 40).first;
}

Outcome propriety_guards() {
  const auto c = fixture_corpus();
  const auto shares = compute_delivery_shares(c);
  std::ostringstream log;
  bool ok = true;

  // Satisfying fixture: witness, sampling proceeds, tails fall off.
  AllocationModel alloc(c, shares);
  if (alloc.propriety_violation() || !alloc.theorem1().witness) return {false, "fixture fails Theorem 1"};
  const auto w = *alloc.theorem1().witness;
  log << "T1 witness " << c.countries[w.country].code << " report " << w.report;
  auto f1 = [&](double beta) { const double s[] = {beta}; return alloc.log_density(s); };
  const double b_opt = maximize_1d(f1, -10.0, 10.0);
  const double gap1 = f1(b_opt) - std::max(f1(50.0), f1(-50.0));
  ok &= gap1 > 100.0;

  const auto contexts = recency_contexts(c, build_weights(c, shares), shares);
  CompletionModel comp(completion_rows(c, contexts));
  if (comp.propriety_violation()) return {false, "fixture fails Theorem 2"};
  auto f2 = [&](double b0, double b1) { return comp.log_density(comp.state_for(b0, b1)); };
  double b0 = -1.0, b1 = 1.0;
  for (int sweep = 0; sweep < 30; ++sweep) {
    b0 = maximize_1d([&](double v) { return f2(v, b1); }, -20.0, 20.0);
    b1 = maximize_1d([&](double v) { return f2(b0, v); }, -5.0, 5.0);
  }
  double tail = -1e300;
  for (double v : {-50.0, 50.0}) tail = std::max({tail, f2(v, b1), f2(b0, v)});
  const double gap2 = f2(b0, b1) - tail;
  ok &= gap2 > 100.0;
  log << "; tail gaps " << fmt("%.3g", gap1) << " / " << fmt("%.3g", gap2) << " nats";

  mcmc::ChainConfig quick;
  quick.n_iter = 200;
  quick.n_burnin = 100;
  try {
    mcmc::run_chains(alloc, quick);
    mcmc::run_chains(comp, quick);
  } catch (const Error& e) {
    return {false, std::string("satisfying fixture refused: ") + e.what()};
  }

  // Theorem 1 violation: every observed split concentrated on one vaccine.
  auto v1 = c;
  for (auto& country : v1.countries)
    for (auto& r : country.reports)
      if (r.per_vaccine_doses && !r.vaccines_in_use.empty()) {
        auto& x = *r.per_vaccine_doses;
        std::fill(x.begin(), x.end(), 0);
        x[r.vaccines_in_use.front()] = r.cum_doses;
      }
  std::string msg;
  const bool r1 = refused(AllocationModel(v1, compute_delivery_shares(v1)), msg);
  ok &= r1;
  log << "; T1 violation " << (r1 ? "refused (" + msg + ")" : "NOT refused");

  // Theorem 2 violation: a single reported fully-vaccinated count.
  auto v2 = c;
  bool kept = false;
  for (auto& country : v2.countries)
    for (std::size_t j = 0; j < country.reports.size(); ++j) {
      auto& r = country.reports[j];
      if (!r.cum_fully) continue;
      if (!kept && j > 0) kept = true;
      else r.cum_fully.reset();
    }
  const bool r2 = refused(CompletionModel(completion_rows(v2, recency_contexts(v2, build_weights(v2, shares), shares))), msg);
  ok &= r2;
  log << "; T2 violation " << (r2 ? "refused (" + msg + ")" : "NOT refused");
  return {ok, log.str()};
}

// ---------------------------------------------------------------------------
// 6. Randomized invariants.

Outcome invariants() {
  const int cases = 10000;
  CounterRng rng(606);
  std::vector<std::pair<std::string, int>> violations;
  auto record = [&](const std::string& name, int v) { violations.emplace_back(name, v); };
  const Catalog cat({{1, "Janssen", 1, 0}, {2, "Pfizer", 2, 21}, {3, "AstraZeneca", 2, 84}});

  {
    int bad = 0;
    for (int n = 0; n < cases; ++n) {
      const std::size_t countries = 1 + n % 6, K = 1 + n % 4;
      std::vector<DeliveryRecord> recs;
      for (std::size_t i = 0; i < countries; ++i) {
        if (i > 0 && rng.uniform() < 0.4) continue;
        DeliveryRecord d{i, std::vector<double>(K)};
        for (auto& a : d.amounts) a = rng.uniform() < 0.3 ? 0.0 : 1e6 * rng.uniform();
        d.amounts[n % K] += 1.0;
        recs.push_back(d);
      }
      const auto sh = compute_delivery_shares(recs, countries, K);
      for (const auto& row : sh.shares) {
        double sum = 0.0;
        for (double v : row) bad += v < 0.0, sum += v;
        bad += std::abs(sum - 1.0) > 1e-12;
      }
    }
    record("delivery shares on the simplex", bad);
  }
  {
    int bad = 0;
    for (int n = 0; n < cases; ++n) {
      std::vector<double> w(1 + n % 5);
      for (auto& v : w) v = rng.uniform() < 0.3 ? 0.0 : 100.0 * rng.uniform();
      w[n % w.size()] = 1.0 + rng.uniform();
      const auto total = static_cast<std::int64_t>(rng.uniform() * 1e8);
      const auto x = impute_doses(total, w, 3.0 * rng.normal(), rng);
      std::int64_t sum = 0;
      for (std::size_t k = 0; k < x.size(); ++k) {
        sum += x[k];
        bad += x[k] < 0 || (w[k] == 0.0 && x[k] != 0);
      }
      bad += sum != total;
    }
    record("imputed doses sum to the total", bad);
  }
  {
    int bad = 0, infeasible = 0;
    for (int n = 0; n < cases; ++n) {
      const std::size_t J = 2 + n % 6;
      std::vector<Day> dates;
      std::vector<std::vector<std::int64_t>> doses;
      Day d = 0;
      std::vector<std::int64_t> cum(3, 0);
      for (std::size_t j = 0; j < J; ++j) {
        d += 1 + static_cast<Day>(rng.uniform() * 40);
        dates.push_back(d);
        for (auto& v : cum) v += 1 + static_cast<std::int64_t>(rng.uniform() * 1e5);
        doses.push_back(cum);
      }
      const std::size_t j = J - 1;
      const auto y = static_cast<std::int64_t>(rng.uniform() * static_cast<double>(cum[0] + (cum[1] + cum[2]) / 2));
      const auto split = split_fully_by_vaccine(y, doses, j, dates, cat, rng);
      if (split.infeasible) {
        ++infeasible;
        continue;
      }
      std::int64_t sum = 0;
      for (auto v : split.counts) sum += v, bad += v < 0;
      bad += sum != y;
    }
    record("fully split sums to Y (" + std::to_string(infeasible) + " flagged infeasible)", bad);
  }
  {
    int bad = 0;
    for (int n = 0; n < cases; ++n) {
      std::vector<std::int64_t> x(3), y(3);
      std::int64_t total = 0;
      for (std::size_t k = 0; k < 3; ++k) {
        x[k] = static_cast<std::int64_t>(rng.uniform() * 1e6);
        const int doses = cat.doses(k);
        // A single-dose schedule completes with every dose.
        y[k] = doses == 1 ? x[k] : static_cast<std::int64_t>(rng.uniform() * static_cast<double>(x[k]) / doses);
        total += x[k];
      }
      std::vector<double> ef(3), ep(3);
      for (std::size_t k = 0; k < 3; ++k) ef[k] = rng.uniform(), ep[k] = rng.uniform() * ef[k];
      const auto m = sample_effective_count(x, y, ef, ep, cat, rng).m;
      bad += m < 0 || m > total;
    }
    record("0 <= M <= X", bad);
  }
  {
    SyntheticOptions so;
    so.seed = 61;
    so.n_countries = 12;
    so.n_survey_countries = 6;
    so.vaccination = false;
    const auto c = generate_synthetic(so).corpus;
    const auto cov = standardize_covariates(c.countries);
    std::vector<Day> days;
    for (Day t = 0; t <= c.last_day; t += 5) days.push_back(t);
    int bad = 0;
    for (int n = 0; n < cases; ++n) {
      InfectionDraw draw{2.0 * rng.normal(), 2.0 * rng.uniform(), 0.01 + 3.0 * rng.uniform(), rng.normal(), rng.normal(), {}};
      const std::size_t i = static_cast<std::size_t>(n) % c.size();
      const auto th = predict_theta_i(c, cov, i, days, draw, c.last_day, rng);
      for (std::size_t k = 0; k < days.size(); ++k) {
        const double tc = c.confirmed_ratio(i, days[k]);
        bad += th[k] < tc * (1 - 1e-12) || th[k] > 1.0 || (k > 0 && th[k] < th[k - 1]);
      }
    }
    record("theta_I in [theta_C, 1] and monotone", bad);
  }
  {
    int bad = 0;
    for (int n = 0; n < cases; ++n) {
      const double a = rng.uniform(), b = rng.uniform();
      const double c = combine_seroprevalence(a, b);
      bad += c < std::max(a, b) - 1e-15 || c > std::min(1.0, a + b) + 1e-15;
    }
    record("combined seroprevalence bounds", bad);
  }
  {
    int bad = 0;
    for (int n = 0; n < cases; ++n) {
      const std::size_t nc = 1 + n % 7, draws = 3, T = 4;
      std::vector<CountryDraws> cd(nc);
      for (auto& c : cd) {
        c.population = std::exp(10.0 + 8.0 * rng.uniform());
        c.theta_v.assign(draws, std::vector<double>(T));
        c.theta_i.assign(draws, std::vector<double>(T));
        for (std::size_t s = 0; s < draws; ++s)
          for (std::size_t t = 0; t < T; ++t) c.theta_v[s][t] = rng.uniform(), c.theta_i[s][t] = rng.uniform();
      }
      const std::vector<Day> dates = {0, 1, 2, 3};
      const auto wt = world_trend(cd, dates);
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t s = 0; s < draws; ++s) {
          double lo = 1.0, hi = 0.0;
          for (const auto& c : cd) {
            const double v = c.theta_v[s][t];
            lo = std::min(lo, v), hi = std::max(hi, v);
          }
          bad += wt.theta_v[t][s] < lo - 1e-12 || wt.theta_v[t][s] > hi + 1e-12;
          lo = 1.0, hi = 0.0;
          for (const auto& c : cd) {
            const double v = combine_seroprevalence(c.theta_v[s][t], c.theta_i[s][t]);
            lo = std::min(lo, v), hi = std::max(hi, v);
          }
          bad += wt.theta[t][s] < lo - 1e-12 || wt.theta[t][s] > hi + 1e-12;
        }
    }
    record("aggregation convexity", bad);
  }

  int total = 0;
  std::string detail;
  for (const auto& [name, v] : violations) {
    total += v;
    if (v) detail += name + ": " + std::to_string(v) + " violations; ";
  }
  return {total == 0, total == 0 ? std::to_string(violations.size()) + " invariants x 10^4 cases, 0 violations"
                                 : detail};
}

// ---------------------------------------------------------------------------
// 7 and 8. End-to-end runs on the bundled fixture.

struct FixtureRuns {
  std::unique_ptr<testing_support::TempDir> dir;
  fs::path a, b;
  double seconds_a = 0.0;
  std::string error;
};

FixtureRuns fixture_runs(const std::string& cli) {
  FixtureRuns out;
  out.dir = std::make_unique<testing_support::TempDir>("acceptance");
  out.a = out.dir->path() / "run_a";
  out.b = out.dir->path() / "run_b";
  const auto config = kSource / "fixtures/synthetic/config.json";
  for (const auto* dir : {&out.a, &out.b}) {
    const auto start = std::chrono::steady_clock::now();
    if (!cli.empty()) {
      const std::string cmd = "\"" + cli + "\" run-all --config \"" + config.string() + "\" --out \"" + dir->string() +
                              "\" > \"" + dir->string() + ".log\" 2>&1";
      if (std::system(cmd.c_str()) != 0) {
        out.error = "run-all failed, see " + dir->string() + ".log";
        return out;
      }
    } else {
      auto cfg = load_config(config);
      cfg.out_dir = *dir;
      try {
        run_all(cfg);
      } catch (const Error& e) {
        out.error = e.what();
        return out;
      }
    }
    if (dir == &out.a) out.seconds_a = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
  return out;
}

Outcome determinism(const FixtureRuns& runs) {
  if (!runs.error.empty()) return {false, runs.error};
  const bool same_trend = read_file(runs.a / "trend.csv") == read_file(runs.b / "trend.csv");
  std::ifstream ma(runs.a / "manifest.json"), mb(runs.b / "manifest.json");
  const auto ja = nlohmann::json::parse(ma), jb = nlohmann::json::parse(mb);
  bool hashes_match = ja.at("outputs") == jb.at("outputs") && !ja.at("outputs").empty();
  std::size_t checked = 0;
  for (const auto& [rel, h] : ja.at("outputs").items()) {
    hashes_match &= file_hash(runs.a / rel) == h.get<std::string>() && file_hash(runs.b / rel) == h.get<std::string>();
    ++checked;
  }
  const bool fast = runs.seconds_a < 300.0;
  return {same_trend && hashes_match && fast, std::string("trend.csv ") + (same_trend ? "identical" : "DIFFERS") +
                                                  "; " + std::to_string(checked) + " output hashes " +
                                                  (hashes_match ? "match" : "MISMATCH") + "; run " +
                                                  fmt("%.1f", runs.seconds_a) + " s"};
}

Outcome fixture_diagnostics(const FixtureRuns& runs) {
  if (!runs.error.empty()) return {false, runs.error};
  double worst_rhat = 1.0, worst_ess = 1e300;
  std::string at_rhat, at_ess;
  std::size_t n = 0;
  bool ok = true;
  for (const char* fit : {"allocation", "completion", "infection"}) {
    const auto store = mcmc::PosteriorStore::load(runs.a / fit / "posterior");
    for (std::size_t p = 0; p < store.names.size(); ++p) {
      if (!store.reported[p]) continue;
      const auto d = store.diagnostics(p);
      ++n;
      if (d.degenerate) continue;
      ok &= d.rhat < 1.1 && d.ess > 200.0;
      if (d.rhat > worst_rhat) worst_rhat = d.rhat, at_rhat = std::string(fit) + ":" + store.names[p];
      if (d.ess < worst_ess) worst_ess = d.ess, at_ess = std::string(fit) + ":" + store.names[p];
    }
  }
  return {ok && n > 0, std::to_string(n) + " parameters; max R-hat " + fmt("%.3f", worst_rhat) + " (" + at_rhat +
                           "), min ESS " + fmt("%.0f", worst_ess) + " (" + at_ess + ")"};
}

}  // namespace

int main(int argc, char** argv) {
  std::string cli;
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--cli" && i + 1 < argc) {
      cli = argv[++i];
    } else if (arg == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string tok; std::getline(ss, tok, ',');) only.insert(std::stoi(tok));
    } else {
      std::cerr << "usage: acceptance [--cli <sero>] [--only N,...]\n";
      return 2;
    }
  }

  struct Criterion {
    int id;
    const char* name;
    double limit_s;  // 0: no runtime bound of its own
    std::function<Outcome()> run;
  };
  FixtureRuns runs;
  auto ensure_runs = [&]() -> const FixtureRuns& {
    if (!runs.dir) runs = fixture_runs(cli);
    return runs;
  };
  const std::vector<Criterion> criteria = {
      {1, "conjugate single-survey oracle", 30.0, conjugate_oracle},
      {2, "efficacy posteriors vs crude ratios", 10.0, efficacy_sanity},
      {3, "efficacy independent of case-rate prior", 0.0, lambda_independence},
      {4, "synthetic parameter recovery", 1200.0, recovery},
      {5, "propriety guards", 0.0, propriety_guards},
      {6, "randomized invariants", 0.0, invariants},
      {7, "end-to-end determinism", 0.0, [&] { return determinism(ensure_runs()); }},
      {8, "fixture convergence diagnostics", 0.0, [&] { return fixture_diagnostics(ensure_runs()); }},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.limit_s > 0.0 && s >= c.limit_s) {
      o.pass = false;
      o.detail += "; over the " + fmt("%.0f", c.limit_s) + " s budget";
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.name << ": " << o.detail << " ("
              << fmt("%.1f", s) << " s)" << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
