#include <gtest/gtest.h>

#include <cmath>

#include "sero/vaccination.hpp"

using namespace sero;

namespace {
const Catalog kCat({{1, "Janssen", 1, 0}, {2, "Pfizer", 2, 21}, {3, "RBD-Dimer", 3, 56}});
using V = std::vector<std::int64_t>;
using D = std::vector<double>;
}  // namespace

TEST(EffectiveCount, TypeOneOnlyHasNoPartialTerm) {
  CounterRng rng(1);
  const auto d = sample_effective_count(V{500, 0, 0}, V{500, 0, 0}, D{0.7, 0.9, 0.9}, D{0.5, 0.5, 0.5}, kCat, rng);
  EXPECT_EQ(d.partial[0], 0);
  EXPECT_LE(d.m, 500);
}

TEST(EffectiveCount, CertainEfficacyIsDeterministic) {
  CounterRng rng(2);
  const auto d = sample_effective_count(V{0, 200, 0}, V{0, 100, 0}, D{1, 1, 1}, D{1, 1, 1}, kCat, rng);
  EXPECT_EQ(d.m, 100);
  EXPECT_EQ(d.partial[1], 0);
}

TEST(EffectiveCount, ThreeDosePartialBasis) {
  EXPECT_DOUBLE_EQ(partial_basis(330, 100, 3), 20.0);
  CounterRng rng(3);
  EffectiveCounters counters;
  const auto d = sample_effective_count(V{0, 0, 330}, V{0, 0, 100}, D{0, 0, 0}, D{1, 1, 1}, kCat, rng, &counters);
  EXPECT_EQ(d.partial[2], 20);
  EXPECT_EQ(counters.rounded_partial, 0u);
  sample_effective_count(V{0, 0, 331}, V{0, 0, 100}, D{0, 0, 0}, D{1, 1, 1}, kCat, rng, &counters);
  EXPECT_EQ(counters.rounded_partial, 1u);
}

TEST(EffectiveCount, NegativePartialClampedAndCounted) {
  CounterRng rng(4);
  EffectiveCounters counters;
  const auto d = sample_effective_count(V{0, 150, 0}, V{0, 100, 0}, D{1, 1, 1}, D{1, 1, 1}, kCat, rng, &counters);
  EXPECT_EQ(d.m, 100);
  EXPECT_EQ(counters.negative_partial, 1u);
}

TEST(EffectiveCount, AllFullyWithCertainEfficacyEqualsFullyCount) {
  CounterRng rng(5);
  for (int rep = 0; rep < 500; ++rep) {
    const V y = {binomial(rng, 1000, 0.5), binomial(rng, 1000, 0.5), binomial(rng, 1000, 0.5)};
    const V x = {y[0], 2 * y[1], 3 * y[2]};
    const auto d = sample_effective_count(x, y, D{1, 1, 1}, D{0.3, 0.3, 0.3}, kCat, rng);
    ASSERT_EQ(d.m, y[0] + y[1] + y[2]);
  }
}

TEST(EffectiveCount, MeanMatchesAnalytic) {
  const V x = {400, 2600, 900}, y = {400, 1000, 200};
  const D ef = {0.67, 0.95, 0.8}, ep = {0.5, 0.52, 0.4};
  double mean = 0.0, var = 0.0;
  for (std::size_t k = 0; k < 3; ++k) {
    const double partial = stats::round_half_even(partial_basis(x[k], y[k], kCat.doses(k)));
    mean += y[k] * ef[k] + partial * ep[k];
    var += y[k] * ef[k] * (1 - ef[k]) + partial * ep[k] * (1 - ep[k]);
  }
  CounterRng rng(6);
  const int n = 10000;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto d = sample_effective_count(x, y, ef, ep, kCat, rng);
    ASSERT_GE(d.m, 0);
    ASSERT_LE(d.m, x[0] + x[1] + x[2]);
    sum += static_cast<double>(d.m);
  }
  EXPECT_NEAR(sum / n, mean, 3.0 * std::sqrt(var / n));
}

TEST(EffectiveCount, ExpectedCountNeverExceedsPeopleWithADose) {
  CounterRng rng(7);
  for (int rep = 0; rep < 5000; ++rep) {
    V x(3), y(3);
    std::int64_t people = 0;
    double expect = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      const int d = kCat.doses(k);
      y[k] = binomial(rng, 500, rng.uniform());
      const std::int64_t partial_people = binomial(rng, 500, rng.uniform());
      // Partially vaccinated people hold on average d/2 doses.
      x[k] = d * y[k] + (d == 1 ? 0 : partial_people * d / 2);
      people += y[k] + (d == 1 ? 0 : stats::round_half_even(partial_basis(x[k], y[k], d)));
      const double ef = rng.uniform(), ep = rng.uniform();
      expect += y[k] * ef + std::max(0.0, static_cast<double>(stats::round_half_even(partial_basis(x[k], y[k], d)))) * ep;
    }
    ASSERT_LE(expect, static_cast<double>(people) + 1e-9);
  }
}

TEST(ThetaV, StepRule) {
  const std::vector<Day> dates = {10, 20};
  const std::vector<std::int64_t> m = {70, 200};
  EXPECT_EQ(theta_v(dates, m, 1000.0, 5), 0.0);
  EXPECT_DOUBLE_EQ(theta_v(dates, m, 1000.0, 10), 0.07);
  EXPECT_DOUBLE_EQ(theta_v(dates, m, 1000.0, 15), 0.07);
  EXPECT_DOUBLE_EQ(theta_v(dates, m, 1000.0, 99), 0.2);
  EXPECT_DOUBLE_EQ(theta_v(dates, std::vector<std::int64_t>{70, 5000}, 1000.0, 30), 1.0);
}
