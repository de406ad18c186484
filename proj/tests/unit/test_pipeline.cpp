#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>

#include "sero/pipeline.hpp"
#include "support/temp_dir.hpp"

using namespace sero;

namespace {

CountryDraws constant_country(const std::string& code, double population, double tv, double ti, std::size_t draws,
                              std::size_t dates) {
  return {code, population, std::vector<std::vector<double>>(draws, std::vector<double>(dates, tv)),
          std::vector<std::vector<double>>(draws, std::vector<double>(dates, ti))};
}

CountryDraws random_country(const std::string& code, CounterRng& rng, std::size_t draws, std::size_t dates) {
  CountryDraws c{code, std::exp(10.0 + 6.0 * rng.uniform()), {}, {}};
  c.theta_v.assign(draws, std::vector<double>(dates));
  c.theta_i.assign(draws, std::vector<double>(dates));
  for (std::size_t d = 0; d < draws; ++d)
    for (std::size_t t = 0; t < dates; ++t) c.theta_v[d][t] = 0.5 * rng.uniform(), c.theta_i[d][t] = rng.uniform();
  return c;
}

nlohmann::json minimal_config() {
  return nlohmann::json::parse(R"({
    "paths": {"data": "data", "catalog": "catalog.csv"},
    "mcmc": {"chains": 2, "iters": 100, "burnin": 50, "seed": 3},
    "model": {"delta": 21, "accuracy_concentration": 200},
    "output": {"dir": "out"}
  })");
}

}  // namespace

TEST(WorldTrend, SingleCountryIsItsOwnTrend) {
  CounterRng rng(1);
  const std::vector<Day> dates = {0, 5, 9};
  const auto c = random_country("AAA", rng, 20, dates.size());
  const auto w = world_trend({c}, dates);
  for (std::size_t t = 0; t < dates.size(); ++t)
    for (std::size_t d = 0; d < 20; ++d) {
      EXPECT_NEAR(w.theta_v[t][d], c.theta_v[d][t], 1e-15);
      EXPECT_NEAR(w.theta_i[t][d], c.theta_i[d][t], 1e-15);
      EXPECT_NEAR(w.theta[t][d], combine_seroprevalence(c.theta_v[d][t], c.theta_i[d][t]), 1e-15);
    }
}

TEST(WorldTrend, EqualPopulationsAverage) {
  const std::vector<Day> dates = {0};
  const auto w = world_trend({constant_country("A", 1e6, 0.0, 0.2, 4, 1), constant_country("B", 1e6, 0.0, 0.4, 4, 1)},
                             dates);
  EXPECT_NEAR(w.summary_i[0].mean, 0.3, 1e-15);
  EXPECT_NEAR(w.summary[0].mean, 0.3, 1e-15);
  EXPECT_EQ(w.summary_v[0].mean, 0.0);
}

TEST(WorldTrend, ConvexOrderFreeAndSplitInvariant) {
  CounterRng rng(2);
  const std::vector<Day> dates = {0, 1, 2, 3, 4};
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<CountryDraws> cs;
    for (int i = 0; i < 1 + rep % 6; ++i) cs.push_back(random_country("C" + std::to_string(i), rng, 8, dates.size()));
    const auto w = world_trend(cs, dates);

    auto reversed = cs;
    std::reverse(reversed.begin(), reversed.end());
    auto split = cs;
    split[0].population *= 0.3;
    auto half = cs[0];
    half.population *= 0.7;
    split.push_back(half);
    const auto wr = world_trend(reversed, dates), ws = world_trend(split, dates);

    for (std::size_t t = 0; t < dates.size(); ++t)
      for (std::size_t d = 0; d < 8; ++d) {
        double lo = 1.0, hi = 0.0;
        for (const auto& c : cs) {
          const double v = combine_seroprevalence(c.theta_v[d][t], c.theta_i[d][t]);
          lo = std::min(lo, v), hi = std::max(hi, v);
        }
        ASSERT_GE(w.theta[t][d], lo - 1e-12);
        ASSERT_LE(w.theta[t][d], hi + 1e-12);
        ASSERT_NEAR(wr.theta[t][d], w.theta[t][d], 1e-12);
        ASSERT_NEAR(ws.theta[t][d], w.theta[t][d], 1e-12);
      }
    for (std::size_t t = 0; t < dates.size(); ++t) {
      ASSERT_LE(w.summary[t].lo, w.summary[t].mean);
      ASSERT_LE(w.summary[t].mean, w.summary[t].hi);
    }
  }
}

TEST(WorldTrend, MissingDrawsRejected) {
  const std::vector<Day> dates = {0, 1};
  auto short_country = constant_country("B", 1e6, 0.1, 0.1, 3, 1);
  try {
    world_trend({constant_country("A", 1e6, 0.1, 0.1, 3, 2), short_country}, dates);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingCountryDraws);
  }
  EXPECT_THROW(world_trend({}, dates), Error);
}

TEST(Treemap, OrderingAndGuards) {
  const auto one = treemap_export({"AAA"}, {7.0}, {{0.5}}, 0);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].country, "AAA");
  EXPECT_EQ(one[0].population, 7.0);
  EXPECT_EQ(one[0].theta_mean, 0.5);

  const auto r = treemap_export({"A", "B", "C"}, {10.0, 5.0, 20.0}, {{0.1}, {0.2}, {0.3}}, 0);
  ASSERT_EQ(r.size(), 3u);
  EXPECT_EQ(r[0].population, 20.0);
  EXPECT_EQ(r[1].population, 10.0);
  EXPECT_EQ(r[2].population, 5.0);
  EXPECT_EQ(r[0].country, "C");

  try {
    treemap_export({"A"}, {1.0}, {{0.1}}, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DateOutOfRange);
  }
  try {
    treemap_export({"A"}, {1.0}, {{1.2}}, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Internal);
  }
}

TEST(Config, ParsesAndResolvesPaths) {
  const auto cfg = parse_config(minimal_config(), "/base");
  EXPECT_EQ(cfg.data_dir, std::filesystem::path("/base/data"));
  EXPECT_EQ(cfg.out_dir, std::filesystem::path("/base/out"));
  EXPECT_EQ(cfg.mcmc.n_chains, 2);
  EXPECT_EQ(cfg.mcmc.seed, 3u);
  EXPECT_EQ(cfg.delta, 21);
  EXPECT_EQ(cfg.stride, 1);
}

TEST(Config, MissingKeyNamed) {
  for (const auto& [section, key] : {std::pair{"mcmc", "burnin"}, std::pair{"model", "delta"}, std::pair{"paths", "data"}}) {
    auto j = minimal_config();
    j[section].erase(key);
    try {
      parse_config(j, "/base");
      FAIL() << key;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::Config);
      EXPECT_NE(e.message().find(std::string(section) + "." + key), std::string::npos) << e.message();
    }
  }
  auto j = minimal_config();
  j.erase("output");
  EXPECT_THROW(parse_config(j, "/base"), Error);
  j = minimal_config();
  j["mcmc"]["chains"] = "four";
  EXPECT_THROW(parse_config(j, "/base"), Error);
}

TEST(Stages, LaterStageWithoutInputsNamesTheMissingStage) {
  testing_support::TempDir dir("stages");
  auto cfg = parse_config(minimal_config(), dir.path());
  try {
    run_stage(Stage::Aggregate, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(e.message().find("aggregate"), std::string::npos) << e.message();
    EXPECT_NE(e.message().find("ingest"), std::string::npos) << e.message();
  }
}

TEST(TrendCsv, HeaderAndRows) {
  Corpus c;
  c.epoch = parse_iso_date("2021-03-01");
  const std::vector<Day> dates = {0, 2};
  const auto w = world_trend({constant_country("A", 1.0, 0.25, 0.5, 2, 2)}, dates);
  std::ostringstream out;
  write_trend_csv(out, w, c);
  const auto text = out.str();
  EXPECT_EQ(text.substr(0, text.find('\n')),
            "date,theta_v_mean,theta_v_lo,theta_v_hi,theta_i_mean,theta_i_lo,theta_i_hi,theta_mean,theta_lo,theta_hi");
  EXPECT_NE(text.find("2021-03-03,0.25"), std::string::npos);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 3);
}
