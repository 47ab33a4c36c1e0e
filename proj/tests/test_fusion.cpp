#include <gtest/gtest.h>

#include "support.hpp"

using namespace mlnood;

TEST(Fusion, ProductOfScoreAndSurvival) {
  const auto s = support::binary_schema({"a", "b"});
  const auto m = support::model(s, {"a -> b"}, {2.0});
  const auto d = ScoreDistribution::normal(0, 1);
  const FusedScorer f(m, d);
  const std::vector<ValueIndex> ok{1, 1}, bad{1, 0};
  EXPECT_EQ(fuse_score(f, ok, 0.0), -2.0 * 0.5);
  EXPECT_EQ(fuse_score(f, bad, 0.0), 0.0);
  EXPECT_THROW(fuse_score(f, ok, NAN), DataError);
}

TEST(Fusion, NoneFamilyReducesToMlnScore) {
  const auto s = support::binary_schema({"a", "b"});
  const auto m = support::model(s, {"a -> b", "a"}, {1.5, -0.5});
  const FusedScorer f(m, ScoreDistribution::none());
  Dataset data(s, {false, true, false});
  for (ValueIndex a = 0; a < 2; ++a)
    for (ValueIndex b = 0; b < 2; ++b) data.add_row(std::vector<ValueIndex>{a, b}, {std::nullopt, 10.0 * a - b, false});
  EXPECT_EQ(fuse_batch(f, data), score_batch(m, data));
}

TEST(Fusion, BatchRequiresDetectorColumn) {
  const auto s = support::binary_schema({"a"});
  const FusedScorer f(support::model(s, {"a"}, {1.0}), ScoreDistribution::none());
  EXPECT_THROW(fuse_batch(f, support::rows(s, {{1}})), DataError);
}

TEST(Fusion, ThresholdIsInclusive) {
  const std::vector<double> s{-1.0, 0.5, 0.7};
  EXPECT_EQ(threshold(s, 0.5), (std::vector<bool>{false, true, true}));
}

TEST(Fusion, ConstantNegativeMlnScoreRanksByDetector) {
  const auto s = support::binary_schema({"a"});
  // "a or not a" always holds, so every row scores -2.
  const auto m = support::model(s, {"a or not a"}, {2.0});
  const FusedScorer f(m, ScoreDistribution::gev(0, 1, 0.1));
  Dataset data(s, {false, true, false});
  const std::vector<double> det{0.3, -1.0, 2.5, 0.0, 1.1};
  for (double x : det) data.add_row(std::vector<ValueIndex>{1}, {std::nullopt, x, false});
  const auto fused = fuse_batch(f, data);
  for (std::size_t i = 0; i < det.size(); ++i) {
    EXPECT_EQ(fused[i], fuse_score(f, data.row(i), det[i]));
    for (std::size_t j = 0; j < det.size(); ++j) EXPECT_EQ(fused[i] < fused[j], det[i] < det[j]);
  }
}
