#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "sero/allocation.hpp"
#include "sero/mcmc.hpp"
#include "support/builders.hpp"
#include "support/oracles.hpp"

using namespace sero;
using testing_support::report;
using testing_support::single_country;

namespace {
const std::vector<VaccineCatalogEntry> kTwo = {{1, "Pfizer", 2, 21}, {2, "Moderna", 2, 28}};
}

TEST(AllocationWeights, IndicatorZeroesUnusedVaccine) {
  auto c = single_country(kTwo, {report(5, 100, {0})});
  const auto w = build_weights(c, testing_support::uniform_shares(1, {0.5, 0.5}));
  EXPECT_EQ(w.dw[0][0], (std::vector<double>{50.0, 0.0}));
  EXPECT_EQ(w.support(0, 0), (std::vector<std::size_t>{0}));
}

TEST(AllocationWeights, RunningSumOverReports) {
  auto c = single_country(kTwo, {report(5, 100, {0, 1}), report(9, 300, {0, 1})});
  const auto w = build_weights(c, testing_support::uniform_shares(1, {0.25, 0.75}));
  EXPECT_EQ(w.dw[0][0], (std::vector<double>{25.0, 75.0}));
  EXPECT_EQ(w.at(0, 1), (std::vector<double>{75.0, 225.0}));
}

TEST(AllocationProbs, ClosedForms) {
  const std::vector<double> w = {2.0, 8.0};
  auto p1 = allocation_probs(w, 1.0);
  EXPECT_NEAR(p1[0], 0.2, 1e-15);
  EXPECT_NEAR(p1[1], 0.8, 1e-15);
  auto p0 = allocation_probs(w, 0.0);
  EXPECT_NEAR(p0[0], 0.5, 1e-15);
  auto ph = allocation_probs(w, 0.5);
  EXPECT_NEAR(ph[0], 1.0 / 3.0, 1e-14);
  EXPECT_NEAR(ph[1], 2.0 / 3.0, 1e-14);
  auto off = allocation_probs(std::vector<double>{0.0, 3.0, 1.0}, 2.0);
  EXPECT_EQ(off[0], 0.0);
  EXPECT_NEAR(off[1], 0.9, 1e-14);
  try {
    allocation_probs(std::vector<double>{0.0, 0.0}, 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptySupport);
  }
}

TEST(AllocationProbs, SoftmaxIdentityAndScaleInvariance) {
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    CounterRng rng(seed);
    std::vector<double> w(2 + seed % 6);
    for (auto& v : w) v = rng.uniform() < 0.2 ? 0.0 : std::exp(6.0 * rng.normal());
    w[0] = 1.0 + rng.uniform();
    const double beta = 3.0 * rng.normal();
    const auto p = allocation_probs(w, beta);
    const double c = std::exp(4.0 * rng.normal());
    std::vector<double> scaled = w;
    for (auto& v : scaled) v *= c;
    const auto ps = allocation_probs(scaled, beta);
    for (std::size_t x = 0; x < w.size(); ++x) {
      EXPECT_NEAR(p[x], ps[x], 1e-12);
      if (!(w[x] > 0.0)) continue;
      for (std::size_t y = 0; y < w.size(); ++y) {
        if (!(w[y] > 0.0) || p[x] == 0.0 || p[y] == 0.0) continue;
        EXPECT_NEAR(std::log(p[x] / p[y]), beta * std::log(w[x] / w[y]), 1e-10 * (1.0 + std::abs(beta * std::log(w[x] / w[y]))));
      }
    }
  }
}

TEST(AllocationLoglik, HandValues) {
  auto c = single_country(kTwo, {report(5, 2, {0, 1}, std::nullopt, std::vector<std::int64_t>{1, 1})});
  const auto w = build_weights(c, testing_support::uniform_shares(1, {0.5, 0.5}));
  EXPECT_EQ(allocation_loglik({}, w, 1.0).value, 0.0);
  const auto rows = observed_splits(c);
  EXPECT_NEAR(allocation_loglik(rows, w, 1.0).value, std::log(0.5), 1e-14);

  auto bad = single_country(kTwo, {report(5, 2, {0}, std::nullopt, std::vector<std::int64_t>{1, 1})});
  const auto wb = build_weights(bad, testing_support::uniform_shares(1, {0.5, 0.5}));
  const auto r = allocation_loglik(observed_splits(bad), wb, 1.0);
  EXPECT_EQ(r.value, -std::numeric_limits<double>::infinity());
  ASSERT_EQ(r.off_support.size(), 1u);
}

TEST(AllocationLoglik, MatchesMultinomialOracle) {
  CounterRng rng(3);
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<double> w = {1.0 + 10 * rng.uniform(), 1.0 + 10 * rng.uniform(), 1.0 + 10 * rng.uniform()};
    std::vector<std::int64_t> x = {binomial(rng, 20, 0.3), binomial(rng, 20, 0.3), binomial(rng, 20, 0.3)};
    const double beta = rng.normal();
    const auto p = allocation_probs(w, beta);
    const std::int64_t n = x[0] + x[1] + x[2];
    double expect = oracle::log_factorial(n);
    for (int k = 0; k < 3; ++k) expect += x[k] * std::log(p[k]) - oracle::log_factorial(x[k]);
    EXPECT_NEAR(multinomial_logpmf(x, p), expect, 1e-9);
  }
}

TEST(Theorem1, WitnessSelection) {
  auto c = single_country(kTwo, {report(5, 5, {0, 1}, std::nullopt, std::vector<std::int64_t>{3, 2})});
  auto sh = testing_support::uniform_shares(1, {0.5, 0.5});
  EXPECT_TRUE(check_theorem1(observed_splits(c), build_weights(c, sh)).holds);

  auto single = single_country(kTwo, {report(5, 5, {0, 1}, std::nullopt, std::vector<std::int64_t>{5, 0}),
                                      report(8, 9, {0, 1}, std::nullopt, std::vector<std::int64_t>{5, 4}),
                                      report(12, 12, {0, 1}, std::nullopt, std::vector<std::int64_t>{0, 12})});
  const auto t = check_theorem1(observed_splits(single), build_weights(single, sh));
  ASSERT_TRUE(t.holds);
  EXPECT_EQ(t.witness->report, 1u);

  auto none = single_country(kTwo, {report(5, 5, {0, 1}, std::nullopt, std::vector<std::int64_t>{5, 0}),
                                    report(8, 9, {0, 1}, std::nullopt, std::vector<std::int64_t>{0, 9})});
  EXPECT_FALSE(check_theorem1(observed_splits(none), build_weights(none, sh)).holds);
  AllocationModel model(none, sh);
  EXPECT_TRUE(model.propriety_violation().has_value());
  try {
    mcmc::run_chains(model, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ProprietyViolation);
  }
}

TEST(ImputeDoses, ForcedZeroAndReproducible) {
  CounterRng rng(1);
  EXPECT_EQ(impute_doses(37, std::vector<double>{0.0, 4.0}, 1.3, rng), (std::vector<std::int64_t>{0, 37}));
  EXPECT_EQ(impute_doses(0, std::vector<double>{1.0, 4.0}, 1.3, rng), (std::vector<std::int64_t>{0, 0}));
  CounterRng a(9, {1}), b(9, {1});
  const auto xa = impute_doses(10, std::vector<double>{2.0, 8.0}, 1.0, a);
  const auto xb = impute_doses(10, std::vector<double>{2.0, 8.0}, 1.0, b);
  EXPECT_EQ(xa, xb);
  EXPECT_EQ(xa[0] + xa[1], 10);
}

TEST(ImputeDoses, AlwaysSumsToTotal) {
  for (std::uint64_t seed = 0; seed < 2000; ++seed) {
    CounterRng rng(seed);
    std::vector<double> w(1 + seed % 5);
    for (auto& v : w) v = rng.uniform() < 0.3 ? 0.0 : 100.0 * rng.uniform();
    w.back() = 1.0;
    const auto total = static_cast<std::int64_t>(rng.uniform() * 1e7);
    const auto x = impute_doses(total, w, 2.0 * rng.normal(), rng);
    std::int64_t sum = 0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      ASSERT_GE(x[k], 0);
      if (w[k] == 0.0) ASSERT_EQ(x[k], 0);
      sum += x[k];
    }
    ASSERT_EQ(sum, total);
  }
}

TEST(AllocationModel, DensityMatchesLoglikAndExcludesOffSupport) {
  auto c = single_country(kTwo, {report(5, 50, {0, 1}, std::nullopt, std::vector<std::int64_t>{20, 30}),
                                 report(8, 90, {0}, std::nullopt, std::vector<std::int64_t>{50, 40}),
                                 report(12, 120, {0, 1}, std::nullopt, std::vector<std::int64_t>{60, 60})});
  auto sh = testing_support::uniform_shares(1, {0.3, 0.7});
  AllocationModel m(c, sh);
  ASSERT_EQ(m.excluded().size(), 0u);
  EXPECT_EQ(m.n_rows(), 3u);
  for (double beta : {-1.0, 0.0, 0.7, 2.5}) {
    const double s[] = {beta};
    EXPECT_NEAR(m.log_density(s), allocation_loglik(observed_splits(c), m.weights(), beta).value, 1e-9);
  }
  auto bad = c;
  bad.countries[0].reports[0].vaccines_in_use = {0};
  AllocationModel mb(bad, sh);
  ASSERT_EQ(mb.excluded().size(), 2u);
  EXPECT_EQ(mb.excluded()[0], (ReportRef{0, 0}));
  EXPECT_EQ(mb.excluded()[1], (ReportRef{0, 1}));
  EXPECT_EQ(mb.n_rows(), 1u);
}

TEST(AllocationModel, PosteriorMatchesGridOracle) {
  auto c = single_country(kTwo, {report(5, 40, {0, 1}, std::nullopt, std::vector<std::int64_t>{10, 30}),
                                 report(9, 100, {0, 1}, std::nullopt, std::vector<std::int64_t>{15, 85})});
  auto sh = testing_support::uniform_shares(1, {0.2, 0.8});
  AllocationModel m(c, sh);
  double z = 0.0, first = 0.0;
  const double lo = -3.0, hi = 5.0;
  const int n = 20000;
  double maxlog = -1e300;
  for (int i = 0; i < n; ++i) {
    const double b[] = {lo + (i + 0.5) * (hi - lo) / n};
    maxlog = std::max(maxlog, m.log_density(b));
  }
  for (int i = 0; i < n; ++i) {
    const double b[] = {lo + (i + 0.5) * (hi - lo) / n};
    const double d = std::exp(m.log_density(b) - maxlog);
    z += d;
    first += b[0] * d;
  }
  mcmc::ChainConfig cfg;
  cfg.n_iter = 6000;
  cfg.n_burnin = 1000;
  const auto store = mcmc::run_chains(m, cfg);
  const auto draws = store.pooled("beta_v1");
  EXPECT_NEAR(stats::mean(draws), first / z, 0.03);
}

TEST(Allocation, DiagnosticsTable) {
  auto c = single_country(kTwo, {report(5, 50, {0}, std::nullopt, std::vector<std::int64_t>{20, 30}),
                                 report(8, 90, {0, 1})});
  std::ostringstream out;
  write_allocation_diagnostics(out, c, build_weights(c, testing_support::uniform_shares(1, {0.5, 0.5})));
  EXPECT_EQ(out.str(),
            "country,date,support_size,observed_split,off_support\n"
            "AAA,2021-01-06,1,1,1\n"
            "AAA,2021-01-09,2,0,0\n");
}

TEST(Allocation, NonmonotoneImputationsReported) {
  std::vector<std::vector<std::vector<std::int64_t>>> x = {{{5, 5}, {4, 8}, {6, 9}}};
  const auto r = nonmonotone_splits(x);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0], (ReportRef{0, 1}));
}
