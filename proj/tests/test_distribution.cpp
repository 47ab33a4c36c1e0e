#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support.hpp"

using namespace mlnood;

namespace {

std::vector<double> draws(const ScoreDistribution& d, std::size_t n, std::uint64_t seed) {
  Rng rng(seed, 0);
  std::vector<double> out(n);
  for (auto& x : out) x = d.quantile(rng.uniform_open());
  return out;
}

}  // namespace

TEST(Distribution, SurvivalIsMonotoneAndBounded) {
  const std::vector<ScoreDistribution> ds{
      ScoreDistribution::gev(0, 1, 0.2),  ScoreDistribution::gev(0, 1, -0.3), ScoreDistribution::gev(1, 2, 0),
      ScoreDistribution::uniform(-1, 3),  ScoreDistribution::normal(2, 0.5),  ScoreDistribution::generalized_normal(0, 1, 1.5),
      ScoreDistribution::lognormal(0, 1), ScoreDistribution::none()};
  for (const auto& d : ds) {
    double prev = 2.0;
    for (double s = -10; s <= 10; s += 0.01) {
      const double v = d.survival(s);
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
      ASSERT_LE(v, prev) << family_name(d.family()) << " at " << s;
      prev = v;
    }
  }
  EXPECT_EQ(ScoreDistribution::none().survival(1e9), 1.0);
  EXPECT_EQ(ScoreDistribution::uniform(0, 1).survival(-5), 1.0);
  EXPECT_EQ(ScoreDistribution::uniform(0, 1).survival(5), 0.0);
}

TEST(Distribution, QuantileInvertsCdf) {
  const std::vector<ScoreDistribution> ds{ScoreDistribution::gev(0, 1, 0.2), ScoreDistribution::gev(0, 1, -0.3),
                                          ScoreDistribution::gev(0, 1, 0), ScoreDistribution::uniform(-1, 3),
                                          ScoreDistribution::normal(2, 0.5),
                                          ScoreDistribution::generalized_normal(0, 1, 1.5),
                                          ScoreDistribution::lognormal(0, 1)};
  for (const auto& d : ds)
    for (double p : {0.01, 0.2, 0.5, 0.8, 0.99}) EXPECT_NEAR(d.cdf(d.quantile(p)), p, 1e-10) << family_name(d.family());
}

TEST(Distribution, GumbelLimitIsContinuous) {
  const auto g = ScoreDistribution::gev(0.3, 1.7, 0.0);
  for (double xi : {1e-9, -1e-9, 1e-7}) {
    const auto near = ScoreDistribution::gev(0.3, 1.7, xi);
    for (double s = -5; s <= 15; s += 0.25) EXPECT_LT(std::abs(near.survival(s) - g.survival(s)), 1e-6);
  }
  // Just past the switch the closed form takes over and must still agree.
  const auto past = ScoreDistribution::gev(0.3, 1.7, 2e-6);
  for (double s = -5; s <= 15; s += 0.25) EXPECT_LT(std::abs(past.survival(s) - g.survival(s)), 1e-4);
}

TEST(Distribution, JsonRoundTrip) {
  const auto d = ScoreDistribution::generalized_normal(0.5, 2, 1.25);
  const auto back = ScoreDistribution::parse(d.to_json().dump());
  EXPECT_EQ(back.family(), Family::GeneralizedNormal);
  EXPECT_EQ(std::vector<double>(back.params().begin(), back.params().end()), (std::vector<double>{0.5, 2, 1.25}));
  EXPECT_THROW(ScoreDistribution::parse(R"({"family": "gev", "params": {"location": 0}})"), DataError);
  EXPECT_THROW(ScoreDistribution::parse(R"({"family": "weird"})"), DataError);
  EXPECT_EQ(parse_family("gennorm"), Family::GeneralizedNormal);
}

TEST(DistributionFit, NormalAndLognormalMle) {
  const auto x = draws(ScoreDistribution::normal(3, 2), 20000, 1);
  const auto n = fit_distribution(x, Family::Normal);
  EXPECT_NEAR(n.params()[0], 3, 0.05);
  EXPECT_NEAR(n.params()[1], 2, 0.05);
  const auto y = draws(ScoreDistribution::lognormal(0.5, 0.3), 20000, 2);
  const auto l = fit_distribution(y, Family::Lognormal);
  EXPECT_NEAR(l.params()[0], 0.5, 0.01);
  EXPECT_NEAR(l.params()[1], 0.3, 0.01);
}

TEST(DistributionFit, GeneralizedNormalRecovery) {
  const auto x = draws(ScoreDistribution::generalized_normal(1, 2, 3), 20000, 3);
  const auto d = fit_distribution(x, Family::GeneralizedNormal);
  EXPECT_NEAR(d.params()[0], 1, 0.05);
  EXPECT_NEAR(d.params()[1], 2, 0.1);
  EXPECT_NEAR(d.params()[2], 3, 0.2);
}

TEST(DistributionFit, GevRecoveryAtModerateSampleSize) {
  const auto x = draws(ScoreDistribution::gev(2, 0.5, -0.2), 20000, 4);
  const auto d = fit_distribution(x, Family::Gev);
  EXPECT_NEAR(d.params()[0], 2, 0.03);
  EXPECT_NEAR(d.params()[1], 0.5, 0.03);
  EXPECT_NEAR(d.params()[2], -0.2, 0.03);
}

TEST(DistributionFit, UniformUsesRange) {
  const std::vector<double> x{0.5, -1, 2};
  const auto d = fit_distribution(x, Family::Uniform);
  EXPECT_EQ(d.params()[0], -1);
  EXPECT_EQ(d.params()[1], 2);
}

TEST(DistributionFit, RejectsDegenerateInput) {
  const std::vector<double> few(5, 1.0);
  EXPECT_THROW(fit_distribution(few, Family::Gev), DataError);
  const std::vector<double> flat(50, 1.0);
  EXPECT_THROW(fit_distribution(flat, Family::Gev), DataError);
  EXPECT_THROW(fit_distribution(flat, Family::Uniform), DataError);
  std::vector<double> neg(50);
  for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = static_cast<double>(i) - 10.0;
  EXPECT_THROW(fit_distribution(neg, Family::Lognormal), DataError);
  neg[3] = NAN;
  EXPECT_THROW(fit_distribution(neg, Family::Normal), DataError);
  EXPECT_EQ(fit_distribution(few, Family::None).family(), Family::None);
}

TEST(Diagnostics, HistogramAndKs) {
  const auto x = draws(ScoreDistribution::normal(0, 1), 5000, 5);
  const auto d = fit_distribution(x, Family::Normal);
  const auto diag = fit_diagnostics(d, x, 20);
  std::size_t total = 0;
  for (const auto& b : diag.histogram) total += b.count;
  EXPECT_EQ(total, x.size());
  EXPECT_LT(*diag.ks_statistic, 0.03);
  EXPECT_TRUE(diag.log_likelihood.has_value());
  const auto none = fit_diagnostics(ScoreDistribution::none(), x, 20);
  EXPECT_TRUE(none.normalization_disabled);
  EXPECT_FALSE(none.ks_statistic.has_value());
  EXPECT_NE(none.summary_json().dump().find("normalization disabled"), std::string::npos);
}
