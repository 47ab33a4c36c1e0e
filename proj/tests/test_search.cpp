#include <gtest/gtest.h>

#include <set>

#include "oracles.hpp"
#include "support.hpp"

using namespace mlnood;

namespace {

std::set<std::string> texts(const CandidatePool& p) {
  std::set<std::string> out;
  for (const auto& c : p.candidates) out.insert(to_string(c));
  return out;
}

}  // namespace

TEST(Generator, TwoBinaryConceptsDepthTwo) {
  const auto s = support::binary_schema({"p", "q"});
  const auto pool = generate_candidates(s, {});
  EXPECT_EQ(pool.size(), 8u);
  const std::set<std::string> want{"p", "not p", "q", "not q", "p -> q", "p -> not q", "not p -> q", "q -> p"};
  EXPECT_EQ(texts(pool), want);
}

TEST(Generator, FourteenConceptPoolSize) {
  std::vector<std::string> names;
  for (int i = 0; i < 14; ++i) names.push_back("c" + std::to_string(i));
  EXPECT_EQ(generate_candidates(support::binary_schema(names), {}).size(), 392u);
}

TEST(Generator, NoTwoCandidatesAreEquivalent) {
  const auto s = support::binary_schema({"a", "b", "c"});
  GeneratorConfig cfg;
  cfg.max_depth = 3;
  cfg.connectives = {NodeKind::Implies, NodeKind::And, NodeKind::Or};
  const auto pool = generate_candidates(s, cfg);
  const auto worlds = oracle::all_worlds(*s);
  std::set<std::vector<bool>> tables;
  for (const auto& c : pool.candidates) {
    std::vector<bool> t;
    for (const auto& w : worlds) t.push_back(oracle::interpret(c.root, *s, w));
    EXPECT_TRUE(tables.insert(t).second) << to_string(c);
    EXPECT_LE(tree_depth(c.root), 4u);
  }
}

TEST(Generator, ConceptSubsetAndDeterminism) {
  const auto s = support::binary_schema({"a", "b", "c"});
  GeneratorConfig cfg;
  cfg.concepts = {"a", "c"};
  const auto p1 = generate_candidates(s, cfg), p2 = generate_candidates(s, cfg);
  ASSERT_EQ(p1.size(), p2.size());
  for (std::size_t i = 0; i < p1.size(); ++i) {
    EXPECT_EQ(p1.candidates[i].source, p2.candidates[i].source);
    EXPECT_EQ(p1.candidates[i].source.find('b'), std::string::npos);
  }
  cfg.concepts = {"zz"};
  EXPECT_THROW(generate_candidates(s, cfg), DataError);
}

TEST(Search, NoUsefulCandidateKeepsSeedSet) {
  // ID and OOD rows are drawn from the same uniform law: no constraint helps.
  const auto s = support::binary_schema({"a", "b"});
  Dataset train(s, {}), val(s, {false, false, true});
  for (ValueIndex a = 0; a < 2; ++a)
    for (ValueIndex b = 0; b < 2; ++b) {
      train.add_row(std::vector<ValueIndex>{a, b});
      val.add_row(std::vector<ValueIndex>{a, b}, {std::nullopt, NAN, false});
      val.add_row(std::vector<ValueIndex>{a, b}, {std::nullopt, NAN, true});
    }
  const auto pool = generate_candidates(s, {});
  const auto r = greedy_search(train, val, pool, {});
  EXPECT_TRUE(r.constraints.empty());
  EXPECT_EQ(r.final_j, r.baseline_j);
  EXPECT_EQ(r.baseline_j, 0.5);
  EXPECT_EQ(r.evaluations, pool.size());
}

TEST(Search, AcceptedJIsStrictlyIncreasingByDelta) {
  const auto s = support::binary_schema({"a", "b", "c"});
  SynthSpec spec(s, support::model(s, {"a -> b", "c"}, {3.0, 1.0}));
  spec.n_id = spec.n_ood = 800;
  spec.seed = 9;
  const auto train = generate_split(spec, 0, false), val = generate_split(spec, 1, true);
  SearchConfig cfg;
  cfg.delta_min = 0.005;
  const auto r = greedy_search(train, val, generate_candidates(s, {}), cfg);
  double j = r.baseline_j;
  for (const auto& a : r.audit)
    if (a.accepted) {
      EXPECT_GT(*a.auroc, j + cfg.delta_min);
      j = *a.auroc;
    }
  EXPECT_EQ(j, r.final_j);
  EXPECT_GE(r.accepted_count(), 1u);
  const auto kb = compile_knowledge_base(r.constraint_file(), s);
  EXPECT_EQ(kb.size(), r.constraints.size());
}

TEST(Search, RejectsBadInputs) {
  const auto s = support::binary_schema({"a"});
  const auto train = support::rows(s, {{1}});
  const auto pool = generate_candidates(s, {});
  EXPECT_THROW(greedy_search(train, train, pool, {}), DataError);
  Dataset val(s, {false, false, true});
  val.add_row(std::vector<ValueIndex>{1}, {std::nullopt, NAN, false});
  EXPECT_THROW(greedy_search(train, val, pool, {}), DataError);
  val.add_row(std::vector<ValueIndex>{0}, {std::nullopt, NAN, true});
  SearchConfig cfg;
  cfg.delta_min = -1;
  EXPECT_THROW(greedy_search(train, val, pool, cfg), DataError);
  EXPECT_THROW(greedy_search(train, val, CandidatePool{}, {}), DataError);
}
