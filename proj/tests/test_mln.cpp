#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "support.hpp"

using namespace mlnood;

namespace {

MlnModel random_model(std::mt19937_64& g, std::size_t max_concepts, std::size_t max_constraints) {
  const auto s = oracle::random_schema(g, max_concepts, 3);
  const std::size_t m = 1 + g() % max_constraints;
  std::vector<CompiledConstraint> kb;
  std::vector<double> w;
  std::uniform_real_distribution<double> wd(-3.0, 3.0);
  for (std::size_t i = 0; i < m; ++i) {
    kb.push_back(compile(ConstraintAst{oracle::random_tree(g, *s, 3), ""}, s, i));
    w.push_back(wd(g));
  }
  return MlnModel(s, std::move(kb), std::move(w));
}

Dataset sample_rows(std::mt19937_64& g, const std::shared_ptr<const Schema>& s, std::size_t n) {
  Dataset d(s, {});
  for (std::size_t r = 0; r < n; ++r) d.add_row(oracle::random_vector(g, *s));
  return d;
}

}  // namespace

TEST(Score, ViolatingAConstraintAddsItsWeight) {
  const auto s = support::binary_schema({"stop", "red", "octagon"});
  const auto m = support::model(s, {"stop -> red", "stop -> octagon"}, {-4.89, -1.5});
  const std::vector<ValueIndex> ok{1, 1, 1}, bad{1, 0, 1};
  EXPECT_DOUBLE_EQ(mln_score(m, ok), 4.89 + 1.5);
  EXPECT_EQ(mln_score(m, bad) - mln_score(m, ok), -4.89);
}

TEST(Score, ExplainSumsBitExactly) {
  std::mt19937_64 g(3);
  for (int t = 0; t < 200; ++t) {
    const auto m = random_model(g, 5, 8);
    const auto z = oracle::random_vector(g, m.schema());
    const auto ex = explain(m, z);
    EXPECT_EQ(ex.total_score, mln_score(m, z));
    double sum = 0.0;
    for (const auto& e : ex.entries) sum += e.contribution;
    EXPECT_EQ(sum, ex.total_score);
  }
}

TEST(Score, BatchIsBitIdenticalToScalar) {
  std::mt19937_64 g(5);
  for (int t = 0; t < 20; ++t) {
    const auto m = random_model(g, 5, 10);
    const auto d = sample_rows(g, m.schema_ptr(), 2500);
    const auto batch = score_batch(m, d);
    for (std::size_t r = 0; r < d.rows(); ++r) ASSERT_EQ(batch[r], mln_score(m, d.row(r)));
  }
}

TEST(Score, EmptyKnowledgeBaseScoresZero) {
  const auto s = support::binary_schema({"a"});
  const MlnModel m(s, {}, {});
  EXPECT_EQ(mln_score(m, std::vector<ValueIndex>{1}), 0.0);
  EXPECT_NEAR(log_partition(m), std::log(2.0), 1e-15);
}

TEST(Model, RejectsMismatchedWeights) {
  const auto s = support::binary_schema({"a"});
  EXPECT_THROW(MlnModel(s, support::kb(s, {"a"}), {}), DataError);
  EXPECT_THROW(MlnModel(s, support::kb(s, {"a"}), {NAN}), NumericalError);
}

TEST(Enumerate, LastConceptVariesFastest) {
  const auto s = std::make_shared<const Schema>(Schema::parse(R"({"a": "binary", "b": ["x", "y", "z"]})"));
  std::vector<std::vector<ValueIndex>> got;
  for (const auto& z : enumerate_space(*s)) got.push_back(z.values);
  EXPECT_EQ(got, oracle::all_worlds(*s));
  EXPECT_THROW(checked_space_size(*s, 5), CapacityError);
}

TEST(Partition, MatchesNaiveSumAndNormalizes) {
  std::mt19937_64 g(13);
  for (int t = 0; t < 100; ++t) {
    const auto m = random_model(g, 5, 6);
    const double lz = log_partition(m);
    EXPECT_NEAR(lz, oracle::naive_log_partition(m), 1e-12 * std::max(1.0, std::abs(lz)));
    double total = 0.0;
    for (const auto& z : oracle::all_worlds(m.schema())) total += std::exp(log_prob(m, z));
    EXPECT_NEAR(total, 1.0, 1e-10);
  }
}

TEST(Partition, CapExceededRaises) {
  const auto s = support::binary_schema({"a", "b", "c"});
  const auto m = support::model(s, {"a"}, {1.0});
  EXPECT_THROW(log_partition(m, 4), CapacityError);
}

TEST(Nll, MatchesNaiveAndFiniteDifferences) {
  std::mt19937_64 g(17);
  for (int t = 0; t < 30; ++t) {
    const auto m = random_model(g, 4, 6);
    const auto d = sample_rows(g, m.schema_ptr(), 200);
    const auto r = nll_and_gradient(m, d);
    EXPECT_NEAR(r.nll, oracle::naive_nll(m, d), 1e-10);
    for (std::size_t i = 0; i < m.size(); ++i) {
      auto wp = m.weights(), wm = m.weights();
      wp[i] += 1e-5;
      wm[i] -= 1e-5;
      const double fd =
          (nll_and_gradient(m.with_weights(wp), d).nll - nll_and_gradient(m.with_weights(wm), d).nll) / 2e-5;
      EXPECT_NEAR(r.gradient[i], fd, 1e-6);
    }
  }
}

TEST(Fit, SingleRuleClosedForm) {
  // One binary concept, constraint "a", 75% of rows satisfy it: w* = log 3.
  const auto s = support::binary_schema({"a"});
  Dataset d(s, {});
  for (int i = 0; i < 400; ++i) d.add_row(std::vector<ValueIndex>{i % 4 != 0 ? 1u : 0u});
  const auto fit = fit_weights(MlnModel::uniform(s, support::kb(s, {"a"}), -1.0), d);
  EXPECT_NEAR(fit.model.weights()[0], std::log(3.0), 1e-6);
  EXPECT_LT(fit.final_nll(), fit.initial_nll());
  EXPECT_EQ(fit.trace.front().weights, std::vector<double>{-1.0});
}

TEST(Fit, NllIsMonotoneAcrossEpochs) {
  std::mt19937_64 g(19);
  for (int t = 0; t < 20; ++t) {
    const auto m = random_model(g, 4, 5);
    const auto d = sample_rows(g, m.schema_ptr(), 100);
    FitConfig cfg;
    cfg.iterations_per_epoch = 2;
    const auto fit = fit_weights(MlnModel::uniform(m.schema_ptr(), m.constraints(), -1.0), d, cfg);
    for (std::size_t e = 1; e < fit.trace.size(); ++e) EXPECT_LE(fit.trace[e].nll, fit.trace[e - 1].nll);
  }
}

TEST(Fit, OverflowingInitialWeightsRaiseNumericalError) {
  const auto s = support::binary_schema({"a", "b"});
  const auto d = support::rows(s, {{1, 1}, {0, 1}});
  FitConfig cfg;
  cfg.init_weight = 1e308;
  EXPECT_THROW(fit_weights(MlnModel::uniform(s, support::kb(s, {"a", "b", "a or b"}), -1.0), d, cfg),
               NumericalError);
}

TEST(Fit, InvalidConfig) {
  const auto s = support::binary_schema({"a"});
  const auto d = support::rows(s, {{1}});
  FitConfig cfg;
  cfg.learning_rate = 0.0;
  EXPECT_THROW(fit_weights(MlnModel::uniform(s, support::kb(s, {"a"}), -1.0), d, cfg), DataError);
}

TEST(Weights, JsonRoundTrip) {
  const auto s = support::binary_schema({"a", "b"});
  const auto m = support::model(s, {"a -> b", "not a"}, {1.25, -0.1});
  const auto back = parse_weights(weights_to_json(m), s);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back.weights(), m.weights());
  EXPECT_EQ(back.constraints()[0].text(), "a -> b");
  EXPECT_THROW(parse_weights("[{\"constraint\": \"zz\", \"weight\": 1}]", s), DataError);
  EXPECT_THROW(parse_weights("{}", s), DataError);
}
