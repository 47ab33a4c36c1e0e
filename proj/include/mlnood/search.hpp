#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "mlnood/constraint.hpp"
#include "mlnood/distribution.hpp"
#include "mlnood/error.hpp"
#include "mlnood/metrics.hpp"
#include "mlnood/mln.hpp"
#include "mlnood/schema.hpp"

namespace mlnood {

// ---------------------------------------------------------------------------
// Candidate generation
// ---------------------------------------------------------------------------

// Depth counts literals (possibly negated atoms) as depth 1; a connective over
// two literals has depth 2, and so on up to 3.
struct GeneratorConfig {
  std::size_t max_depth = 2;
  std::vector<NodeKind> connectives = {NodeKind::Implies};
  bool allow_negation = true;
  std::vector<std::string> concepts;  // empty = every concept
  // false: bare literals over binary concepts only. true: non-binary concepts
  // contribute one `c=v` atom per value.
  bool value_atoms = false;
  std::size_t max_candidates = 2'000'000;
};

struct CandidatePool {
  GeneratorConfig config;
  std::vector<ConstraintAst> candidates;

  std::size_t size() const noexcept { return candidates.size(); }
};

namespace detail {

struct Candidate {
  NodePtr tree;
  std::vector<std::size_t> concept_set;  // sorted, distinct
  std::size_t depth;
  bool leftmost_positive;
};

inline bool disjoint(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] == b[j]) return false;
    a[i] < b[j] ? ++i : ++j;
  }
  return true;
}

// Truth table of `tree` over the joint domain of its concepts; together with
// the concept set this identifies the boolean function.
inline std::string truth_key(const Candidate& c, const std::shared_ptr<const Schema>& schema) {
  const auto prog = compile(ConstraintAst{c.tree, {}}, schema);
  std::vector<ValueIndex> z(schema->size(), 0);
  std::string key;
  for (auto ci : c.concept_set) key += std::to_string(ci) + ',';
  key += '|';
  std::vector<std::size_t> sizes;
  for (auto ci : c.concept_set) sizes.push_back(schema->concept_at(ci).values.size());
  std::size_t combos = 1;
  for (auto s : sizes) combos *= s;
  for (std::size_t w = 0; w < combos; ++w) {
    std::size_t rest = w;
    for (std::size_t k = c.concept_set.size(); k-- > 0;) {
      z[c.concept_set[k]] = static_cast<ValueIndex>(rest % sizes[k]);
      rest /= sizes[k];
    }
    key += run_scalar(prog.program(), z.data()) ? '1' : '0';
  }
  return key;
}

}  // namespace detail

// Deterministic candidate pool: literals (schema order, positive before
// negated), then depth-2 trees per connective ordered by left then right
// literal, then depth-3 trees. Leaves of one tree use distinct concepts.
// Logically equivalent candidates are merged, keeping the one whose leftmost
// literal is positive, else the lexicographically smaller text; for
// implications this removes contrapositive duplicates.
inline CandidatePool generate_candidates(const std::shared_ptr<const Schema>& schema, const GeneratorConfig& cfg) {
  if (cfg.max_depth < 1 || cfg.max_depth > 3) throw DataError("generator: max_depth must be 1, 2 or 3");
  if (cfg.max_depth > 1 && cfg.connectives.empty()) throw DataError("generator: no connectives allowed");
  for (auto k : cfg.connectives)
    if (k == NodeKind::Atom || k == NodeKind::Not) throw DataError("generator: connectives must be binary");

  std::vector<std::size_t> selected;
  if (cfg.concepts.empty()) {
    for (std::size_t i = 0; i < schema->size(); ++i) selected.push_back(i);
  } else {
    for (const auto& name : cfg.concepts) {
      auto idx = schema->find(name);
      if (!idx) throw DataError("generator: unknown concept '" + name + "'");
      selected.push_back(*idx);
    }
    std::sort(selected.begin(), selected.end());
    selected.erase(std::unique(selected.begin(), selected.end()), selected.end());
  }
  if (selected.empty()) throw DataError("generator: empty concept selection");

  using detail::Candidate;
  std::vector<Candidate> literals;
  for (auto ci : selected) {
    const auto& c = schema->concept_at(ci);
    std::vector<NodePtr> atoms;
    if (c.is_binary()) {
      atoms.push_back(make_atom(c.name));
    } else if (cfg.value_atoms) {
      for (const auto& v : c.values) atoms.push_back(make_atom(c.name, v));
    } else {
      throw DataError("generator: concept '" + c.name + "' is not binary (enable value atoms to use it)");
    }
    for (auto& a : atoms) {
      literals.push_back({a, {ci}, 1, true});
      if (cfg.allow_negation) literals.push_back({make_not(a), {ci}, 1, false});
    }
  }

  std::vector<Candidate> all = literals;
  std::vector<Candidate> shallow = literals;  // depth <= current - 1
  for (std::size_t depth = 2; depth <= cfg.max_depth; ++depth) {
    std::vector<Candidate> level;
    for (auto kind : cfg.connectives) {
      for (const auto& l : shallow) {
        for (const auto& r : shallow) {
          if (std::max(l.depth, r.depth) != depth - 1) continue;
          if (!detail::disjoint(l.concept_set, r.concept_set)) continue;
          std::vector<std::size_t> cs;
          std::merge(l.concept_set.begin(), l.concept_set.end(), r.concept_set.begin(), r.concept_set.end(),
                     std::back_inserter(cs));
          level.push_back({make_binary(kind, l.tree, r.tree), std::move(cs), depth, l.leftmost_positive});
          if (all.size() + level.size() > cfg.max_candidates)
            throw CapacityError("generator: more than " + std::to_string(cfg.max_candidates) + " candidates");
        }
      }
    }
    shallow.insert(shallow.end(), level.begin(), level.end());
    all.insert(all.end(), level.begin(), level.end());
  }

  // Merge logical equivalents, then restore generation order.
  std::unordered_map<std::string, std::size_t> best;  // key -> index into `all`
  std::vector<std::string> text(all.size());
  for (std::size_t i = 0; i < all.size(); ++i) {
    text[i] = to_string(all[i].tree);
    auto key = detail::truth_key(all[i], schema);
    auto [it, inserted] = best.emplace(std::move(key), i);
    if (inserted) continue;
    const auto& cur = all[it->second];
    const bool better = all[i].leftmost_positive != cur.leftmost_positive ? all[i].leftmost_positive
                                                                          : text[i] < text[it->second];
    if (better) it->second = i;
  }
  std::vector<std::size_t> keep;
  keep.reserve(best.size());
  for (const auto& [k, i] : best) keep.push_back(i);
  std::sort(keep.begin(), keep.end());

  CandidatePool pool{cfg, {}};
  pool.candidates.reserve(keep.size());
  for (auto i : keep) pool.candidates.push_back(ConstraintAst{all[i].tree, text[i]});
  return pool;
}

// ---------------------------------------------------------------------------
// Greedy search
// ---------------------------------------------------------------------------

// J - λ·|φ|
inline double objective(double j, std::size_t constraint_count, double lambda) {
  return j - lambda * static_cast<double>(constraint_count);
}

struct SearchConfig {
  double delta_min = 0.01;
  std::optional<double> baseline;  // J0; defaults to the AUROC of the fitted seed set
  std::vector<ConstraintAst> seeds;
  FitConfig fit;
  // Score validation rows with the fused detector instead of the standalone
  // MLN score; needs `distribution` and detector scores on val.
  bool evaluate_fused = false;
  std::optional<ScoreDistribution> distribution;
};

struct AuditEntry {
  std::size_t index;
  std::string candidate;
  std::optional<double> auroc;  // empty when the fit failed
  bool accepted = false;
  std::string error;
};

struct SearchResult {
  std::vector<ConstraintAst> constraints;  // seeds followed by accepted candidates
  std::vector<double> weights;             // fitted weights of the final set
  double baseline_j = 0.0;
  double final_j = 0.0;
  double delta_min = 0.0;
  std::size_t pool_size = 0;
  std::size_t evaluations = 0;
  std::vector<AuditEntry> audit;

  std::size_t accepted_count() const {
    return static_cast<std::size_t>(std::count_if(audit.begin(), audit.end(), [](const auto& a) { return a.accepted; }));
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["delta_min"] = delta_min;
    j["baseline_j"] = baseline_j;
    j["final_j"] = final_j;
    j["pool_size"] = pool_size;
    j["evaluations"] = evaluations;
    auto acc = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < constraints.size(); ++i)
      acc.push_back({{"constraint", constraints[i].source}, {"weight", weights.at(i)}});
    j["accepted"] = std::move(acc);
    auto log = nlohmann::ordered_json::array();
    for (const auto& a : audit) {
      nlohmann::ordered_json e{{"index", a.index}, {"candidate", a.candidate}};
      e["auroc"] = a.auroc ? nlohmann::ordered_json(*a.auroc) : nlohmann::ordered_json();
      e["accepted"] = a.accepted;
      if (!a.error.empty()) e["error"] = a.error;
      log.push_back(std::move(e));
    }
    j["audit"] = std::move(log);
    return j;
  }

  std::string constraint_file() const {
    std::string out;
    for (const auto& c : constraints) out += c.source + '\n';
    return out;
  }
};

namespace detail {

// Satisfaction of one constraint over the world list, the training rows and
// the validation rows. Computed once per distinct constraint.
struct ConstraintColumns {
  std::vector<std::uint8_t> worlds;
  double train_fraction = 0.0;
  std::vector<std::uint8_t> val;
};

class SearchContext {
 public:
  SearchContext(const Dataset& train, const Dataset& val, const SearchConfig& cfg)
      : schema_(train.schema_ptr()), train_(train), val_(val), cfg_(cfg),
        world_cells_(materialize_space(*schema_, cfg.fit.space_cap)) {
    if (cfg.evaluate_fused) {
      if (!cfg.distribution) throw DataError("search: fused evaluation needs a score distribution");
      if (!val.has_detector_scores()) throw DataError("search: fused evaluation needs val detector scores");
      for (std::size_t r = 0; r < val.rows(); ++r)
        val_factor_.push_back(normalized_detector_score(*cfg.distribution, val.detector_score(r)));
    }
    for (std::size_t r = 0; r < val.rows(); ++r) (val.is_ood(r) ? val_ood_rows_ : val_id_rows_).push_back(r);
  }

  const ConstraintColumns& columns(const ConstraintAst& ast) {
    auto it = cache_.find(ast.source);
    if (it != cache_.end()) return it->second;
    const auto c = compile(ast, schema_);
    ConstraintColumns col;
    col.worlds = evaluate_cells(c, world_cells_, schema_->size());
    const auto tr = evaluate_batch(c, train_);
    std::uint64_t count = 0;
    for (auto v : tr) count += v;
    col.train_fraction = static_cast<double>(count) / static_cast<double>(train_.rows());
    col.val = evaluate_batch(c, val_);
    return cache_.emplace(ast.source, std::move(col)).first->second;
  }

  struct Evaluation {
    double auroc;
    std::vector<double> weights;
  };

  // Fits weights for `set` on train and returns the validation AUROC.
  Evaluation evaluate(const std::vector<ConstraintAst>& set) {
    std::vector<const ConstraintColumns*> cols;
    for (const auto& a : set) cols.push_back(&columns(a));
    const std::size_t m = cols.size();

    WorldStatistics st;
    st.constraints = m;
    st.worlds = schema_->size() ? world_cells_.size() / schema_->size() : 1;
    std::vector<double> empirical(m);
    for (std::size_t i = 0; i < m; ++i) empirical[i] = cols[i]->train_fraction;
    std::unordered_map<std::string, std::size_t> seen;
    std::string key(m, '\0');
    for (std::uint64_t w = 0; w < st.worlds; ++w) {
      for (std::size_t i = 0; i < m; ++i) key[i] = static_cast<char>(cols[i]->worlds[w]);
      auto [it, inserted] = seen.emplace(key, st.multiplicity.size());
      if (inserted) {
        st.patterns.insert(st.patterns.end(), key.begin(), key.end());
        st.multiplicity.push_back(1.0);
      } else {
        st.multiplicity[it->second] += 1.0;
      }
    }
    NllObjective objective(std::move(st), std::move(empirical));
    std::vector<CompiledConstraint> kb;
    for (std::size_t i = 0; i < m; ++i) kb.push_back(compile(set[i], schema_, i));
    auto fit = fit_weights(objective, MlnModel::uniform(schema_, std::move(kb), cfg_.fit.init_weight), cfg_.fit);
    const auto& w = fit.model.weights();

    std::vector<double> id_scores, ood_scores;
    id_scores.reserve(val_id_rows_.size());
    ood_scores.reserve(val_ood_rows_.size());
    auto score = [&](std::size_t r) {
      double s = 0.0;
      for (std::size_t i = 0; i < m; ++i) s += -w[i] * static_cast<double>(cols[i]->val[r]);
      return cfg_.evaluate_fused ? s * val_factor_[r] : s;
    };
    for (auto r : val_id_rows_) id_scores.push_back(score(r));
    for (auto r : val_ood_rows_) ood_scores.push_back(score(r));
    return {auroc(id_scores, ood_scores), w};
  }

 private:
  std::shared_ptr<const Schema> schema_;
  const Dataset& train_;
  const Dataset& val_;
  const SearchConfig& cfg_;
  std::vector<ValueIndex> world_cells_;
  std::vector<double> val_factor_;
  std::vector<std::size_t> val_id_rows_, val_ood_rows_;
  std::map<std::string, ConstraintColumns> cache_;
};

}  // namespace detail

// Greedy forward selection over the pool in order: each candidate is added
// to the working set, all weights are refit from the initial value on the
// ID training rows, and the candidate is kept iff the validation AUROC
// exceeds the current J by more than delta_min. Exactly |pool| evaluations.
inline SearchResult greedy_search(const Dataset& train_data, const Dataset& val, const CandidatePool& pool,
                                  const SearchConfig& cfg) {
  if (pool.candidates.empty()) throw DataError("search: empty candidate pool");
  if (!(cfg.delta_min >= 0.0)) throw DataError("search: delta_min must be >= 0");
  cfg.fit.validate();
  require_same_schema(train_data.schema(), val.schema());
  if (!val.has_ood_flags()) throw DataError("search: validation set needs an __is_ood column");
  std::size_t n_ood = 0;
  for (std::size_t r = 0; r < val.rows(); ++r) n_ood += val.is_ood(r);
  if (n_ood == 0 || n_ood == val.rows()) throw DataError("search: validation set must contain ID and OOD rows");
  const Dataset train = train_data.has_ood_flags() ? train_data.select_class(false) : train_data;
  if (train.empty()) throw DataError("search: training set has no ID rows");

  detail::SearchContext ctx(train, val, cfg);
  SearchResult res;
  res.delta_min = cfg.delta_min;
  res.pool_size = pool.size();
  res.constraints = cfg.seeds;
  auto seed_eval = ctx.evaluate(res.constraints);
  res.weights = seed_eval.weights;
  res.baseline_j = cfg.baseline ? *cfg.baseline : seed_eval.auroc;
  double j = res.baseline_j;

  for (std::size_t i = 0; i < pool.candidates.size(); ++i) {
    const auto& cand = pool.candidates[i];
    AuditEntry entry{i, cand.source, std::nullopt, false, {}};
    auto trial = res.constraints;
    trial.push_back(cand);
    try {
      auto ev = ctx.evaluate(trial);
      entry.auroc = ev.auroc;
      if (ev.auroc > j + cfg.delta_min) {
        entry.accepted = true;
        j = ev.auroc;
        res.constraints = std::move(trial);
        res.weights = std::move(ev.weights);
      }
    } catch (const Error& e) {
      entry.error = e.what();
    }
    ++res.evaluations;
    res.audit.push_back(std::move(entry));
  }
  res.final_j = j;
  return res;
}

}  // namespace mlnood
