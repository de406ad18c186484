#pragma once

// Forward simulation of a corpus from known parameter values. Used for the
// bundled fixture and for parameter-recovery checks.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sero/allocation.hpp"
#include "sero/completion.hpp"
#include "sero/corpus.hpp"
#include "sero/infection.hpp"
#include "sero/rng.hpp"
#include "sero/stats.hpp"
#include "sero/vaccination.hpp"

namespace sero {

struct SyntheticTruth {
  double beta_v1 = 1.0;
  double beta0_v2 = -0.935;
  double beta1_v2 = 1.15;
  double mu0 = 1.6;
  double sigma = 0.35;
  double tau = 0.15;
  double beta1_i = 0.079;
  double beta2_i = -0.581;
  double efficacy_full = 0.9;
  double efficacy_partial = 0.6;

  nlohmann::json to_json() const {
    return {{"beta_v1", beta_v1}, {"beta0_v2", beta0_v2}, {"beta1_v2", beta1_v2}, {"mu0", mu0},
            {"sigma", sigma},     {"tau", tau},           {"beta1_i", beta1_i},   {"beta2_i", beta2_i},
            {"efficacy_full", efficacy_full},             {"efficacy_partial", efficacy_partial}};
  }
};

struct SyntheticOptions {
  std::uint64_t seed = 1;
  std::string start_date = "2021-01-01";
  int n_days = 120;
  std::size_t n_countries = 5;
  std::vector<VaccineCatalogEntry> vaccines = {
      {1, "Janssen", 1, 0}, {2, "Pfizer", 2, 21}, {3, "AstraZeneca", 2, 84}};
  bool vaccination = true;
  double per_vaccine_fraction = 0.6;  // countries whose split is reported
  double fully_fraction = 0.8;        // reports carrying a fully-vaccinated count
  double delivery_fraction = 0.8;     // countries with delivery records
  std::size_t n_survey_countries = 5;
  std::size_t surveys_per_country = 2;
  int first_survey_day = 30;
  double attack_rate_lo = 0.01, attack_rate_hi = 0.08;  // final confirmed share of the population
  std::int64_t validation_positives = 100;              // panel sizes behind sensitivity / specificity
  std::int64_t validation_negatives = 200;
  std::vector<ClinicalTrial> trials;
};

struct SyntheticData {
  Corpus corpus;
  nlohmann::json truth;
};

inline SyntheticData generate_synthetic(const SyntheticOptions& opt, const SyntheticTruth& truth = {}) {
  using std::chrono::days;
  CounterRng rng(opt.seed, {0x5e7d});
  auto unif = [&](double a, double b) { return a + (b - a) * rng.uniform(); };
  auto unif_int = [&](int a, int b) { return a + static_cast<int>(rng.uniform() * (b - a + 1)); };

  SyntheticData out;
  Corpus& c = out.corpus;
  c.catalog = Catalog(opt.vaccines);
  c.epoch = parse_iso_date(opt.start_date);
  c.last_day = opt.n_days - 1;
  c.trials = opt.trials;
  const std::size_t K = c.catalog.size();

  for (std::size_t i = 0; i < opt.n_countries; ++i) {
    Country country;
    char code[8];
    std::snprintf(code, sizeof code, "C%03zu", i + 1);
    country.code = code;
    country.population = std::round(std::exp(unif(std::log(1e6), std::log(5e7))));
    country.pop_density = std::round(std::exp(4.0 + 1.0 * rng.normal()) * 100.0) / 100.0 + 1.0;
    country.gdp_pc = std::round(std::exp(9.0 + 1.0 * rng.normal()));
    country.confirmed_ref = "confirmed.csv";
    // Logistic epidemic curve reaching final_ratio of the population.
    const double final_ratio = unif(opt.attack_rate_lo, opt.attack_rate_hi);
    const double mid = unif(0.0, opt.n_days);
    const double speed = unif(0.03, 0.08);
    const double at0 = 1.0 / (1.0 + std::exp(speed * mid));
    for (Day d = 0; d < opt.n_days; ++d) {
      const double frac = (1.0 / (1.0 + std::exp(-speed * (d - mid))) - at0) / (1.0 - at0);
      const auto cases = static_cast<std::int64_t>(std::round(country.population * final_ratio * (0.02 + 0.98 * frac)));
      country.confirmed.push_back({d, std::max<std::int64_t>(cases, 1)});
    }
    c.countries.push_back(std::move(country));
  }

  std::vector<std::vector<std::vector<std::int64_t>>> split_truth(c.size());
  std::vector<std::vector<std::int64_t>> m_truth(c.size());
  if (opt.vaccination) {
    for (std::size_t i = 0; i < c.size(); ++i) {
      auto& country = c.countries[i];
      const int r0 = unif_int(0, 15);
      std::vector<int> start(K);
      const std::size_t first = static_cast<std::size_t>(rng.uniform() * K) % K;
      for (std::size_t k = 0; k < K; ++k) start[k] = k == first ? r0 : r0 + unif_int(0, 40);
      if (rng.uniform() < 0.3 && K > 1) start[(first + 1) % K] = opt.n_days + 1;  // never used
      const double base = country.population * unif(2e-4, 1.5e-3);
      const double growth = unif(0.0, 0.05);
      for (int d = r0; d < opt.n_days; d += unif_int(3, 9)) {
        VaccinationReport rep;
        rep.date = d;
        const double t = d - r0 + 1;
        rep.cum_doses = static_cast<std::int64_t>(std::round(base * (t + 0.5 * growth * t * t)));
        for (std::size_t k = 0; k < K; ++k)
          if (start[k] <= d) rep.vaccines_in_use.push_back(k);
        country.reports.push_back(std::move(rep));
      }
      if (rng.uniform() < opt.delivery_fraction || i == 0) {
        DeliveryRecord del{i, std::vector<double>(K, 0.0)};
        for (std::size_t k = 0; k < K; ++k) del.amounts[k] = std::round(unif(0.05, 1.0) * country.population * 0.1);
        c.deliveries.push_back(std::move(del));
      }
    }

    const auto shares = compute_delivery_shares(c);
    const auto weights = build_weights(c, shares);
    for (std::size_t i = 0; i < c.size(); ++i) {
      auto& reports = c.countries[i].reports;
      const bool show_split = rng.uniform() < opt.per_vaccine_fraction;
      for (std::size_t j = 0; j < reports.size(); ++j) {
        auto x = impute_doses(reports[j].cum_doses, weights.at(i, j), truth.beta_v1, rng);
        if (show_split) reports[j].per_vaccine_doses = x;
        split_truth[i].push_back(std::move(x));
      }
    }
    const auto contexts = recency_contexts(c, weights, shares);
    for (std::size_t i = 0; i < c.size(); ++i) {
      auto& reports = c.countries[i].reports;
      const auto dates = c.report_dates(i);
      for (std::size_t j = 0; j < reports.size(); ++j) {
        const auto& ctx = contexts[i][j];
        const double x = static_cast<double>(reports[j].cum_doses);
        const std::int64_t y = impute_fully(reports[j].cum_doses, ctx, truth.beta0_v2, truth.beta1_v2, rng);
        // Report Y only where the pace term leaves Y comfortably above zero,
        // a covariate-based selection that keeps clamping out of the data.
        const double pace = imputation_mean(x, ctx, truth.beta0_v2, truth.beta1_v2, nullptr) - x;
        const bool reportable = j > 0 && (ctx.pure_type1() || pace < 0.5 * x);
        if (reportable && rng.uniform() < opt.fully_fraction) reports[j].cum_fully = y;
        const auto yk = split_fully_by_vaccine(y, std::span(split_truth[i]), j, std::span(dates), c.catalog, rng);
        const std::vector<double> ef(K, truth.efficacy_full), ep(K, truth.efficacy_partial);
        m_truth[i].push_back(
            sample_effective_count(split_truth[i][j], yk.counts, ef, ep, c.catalog, rng).m);
      }
    }
  }

  // Serosurveys.
  const auto cov = standardize_covariates(c.countries);
  std::vector<std::size_t> order(c.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform() * i) % i]);
  nlohmann::json beta_truth = nlohmann::json::object();
  for (std::size_t n = 0; n < std::min(opt.n_survey_countries, c.size()); ++n) {
    const std::size_t i = order[n];
    const auto& country = c.countries[i];
    const double beta = truth.mu0 + truth.sigma * rng.normal();
    beta_truth[country.code] = beta;
    const double mean = beta + truth.beta1_i * cov.pop_density.values[i] + truth.beta2_i * cov.gdp.values[i];
    std::vector<Day> days;
    while (days.size() < opt.surveys_per_country) {
      const Day d = unif_int(opt.first_survey_day, opt.n_days - 1);
      if (std::find(days.begin(), days.end(), d) == days.end()) days.push_back(d);
    }
    std::sort(days.begin(), days.end());
    for (Day day : days) {
      Serosurvey sv;
      sv.country = i;
      sv.end_date = day;
      const double tc = c.confirmed_ratio(i, sv.end_date);
      const double r = stats::truncated_normal(rng, mean, truth.tau, 0.0, ratio_bound(tc));
      const double ti = std::min(1.0, tc * std::exp(r));
      double tv = 0.0;
      if (opt.vaccination) {
        const auto dates = c.report_dates(i);
        tv = theta_v(dates, m_truth[i], country.population, sv.end_date);
      }
      const std::int64_t np = opt.validation_positives, nn = opt.validation_negatives;
      const auto tp = static_cast<std::int64_t>(std::round(unif(0.85, 0.99) * static_cast<double>(np)));
      const auto tn = static_cast<std::int64_t>(std::round(unif(0.95, 0.995) * static_cast<double>(nn)));
      sv.sensitivity = {tp, np - tp, std::nullopt};
      sv.specificity = {tn, nn - tn, std::nullopt};
      const double p_plus = beta_variate(rng, static_cast<double>(tp) + 1.0, static_cast<double>(np - tp) + 1.0);
      const double p_minus = beta_variate(rng, static_cast<double>(tn) + 1.0, static_cast<double>(nn - tn) + 1.0);
      sv.n_samples = unif_int(1000, 4000);
      sv.n_positive = binomial(rng, sv.n_samples, apparent_prevalence(combine_seroprevalence(tv, ti), p_plus, p_minus));
      c.surveys.push_back(sv);
    }
  }
  std::stable_sort(c.surveys.begin(), c.surveys.end(), [](const Serosurvey& a, const Serosurvey& b) {
    return std::tie(a.country, a.end_date) < std::tie(b.country, b.end_date);
  });
  out.truth = truth.to_json();
  out.truth["country_beta"] = beta_truth;
  out.truth["seed"] = opt.seed;
  return out;
}

}  // namespace sero
