#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sero/corpus.hpp"

namespace testing_support {

inline sero::VaccinationReport report(sero::Day date, std::int64_t doses, std::vector<std::size_t> in_use,
                                      std::optional<std::int64_t> fully = std::nullopt,
                                      std::optional<std::vector<std::int64_t>> split = std::nullopt) {
  sero::VaccinationReport r;
  r.date = date;
  r.cum_doses = doses;
  r.cum_fully = fully;
  r.vaccines_in_use = std::move(in_use);
  r.per_vaccine_doses = std::move(split);
  return r;
}

/// One-country corpus with the given catalog and reports.
inline sero::Corpus single_country(std::vector<sero::VaccineCatalogEntry> vaccines,
                                   std::vector<sero::VaccinationReport> reports, double population = 1e6) {
  sero::Corpus c;
  c.catalog = sero::Catalog(std::move(vaccines));
  c.epoch = sero::parse_iso_date("2021-01-01");
  sero::Country country;
  country.code = "AAA";
  country.population = population;
  country.pop_density = 100.0;
  country.gdp_pc = 1e4;
  country.confirmed = {{0, 1000}};
  country.reports = std::move(reports);
  c.last_day = country.reports.empty() ? 0 : country.reports.back().date;
  c.countries.push_back(std::move(country));
  return c;
}

inline sero::DeliveryShares uniform_shares(std::size_t n_countries, std::vector<double> row) {
  return {std::vector<std::vector<double>>(n_countries, row), std::vector<bool>(n_countries, true)};
}

}  // namespace testing_support
