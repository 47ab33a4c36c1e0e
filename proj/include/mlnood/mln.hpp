#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iterator>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "mlnood/constraint.hpp"
#include "mlnood/error.hpp"
#include "mlnood/io.hpp"
#include "mlnood/optimize.hpp"
#include "mlnood/parallel.hpp"
#include "mlnood/schema.hpp"

namespace mlnood {

inline constexpr std::uint64_t kDefaultSpaceCap = 1'000'000;

// A knowledge base of compiled constraints with one real weight each.
class MlnModel {
 public:
  MlnModel(std::shared_ptr<const Schema> schema, std::vector<CompiledConstraint> constraints,
           std::vector<double> weights)
      : schema_(std::move(schema)), constraints_(std::move(constraints)), weights_(std::move(weights)) {
    if (!schema_) throw DataError("model requires a schema");
    if (weights_.size() != constraints_.size())
      throw DataError("model has " + std::to_string(constraints_.size()) + " constraints but " +
                      std::to_string(weights_.size()) + " weights");
    for (std::size_t i = 0; i < weights_.size(); ++i)
      if (!std::isfinite(weights_[i])) throw NumericalError("weight " + std::to_string(i) + " is not finite");
    for (const auto& c : constraints_) require_same_schema(*schema_, c.schema());
  }

  static MlnModel uniform(std::shared_ptr<const Schema> schema, std::vector<CompiledConstraint> constraints,
                          double weight) {
    std::vector<double> w(constraints.size(), weight);
    return MlnModel(std::move(schema), std::move(constraints), std::move(w));
  }

  MlnModel with_weights(std::vector<double> weights) const { return MlnModel(schema_, constraints_, std::move(weights)); }

  const Schema& schema() const noexcept { return *schema_; }
  const std::shared_ptr<const Schema>& schema_ptr() const noexcept { return schema_; }
  const std::vector<CompiledConstraint>& constraints() const noexcept { return constraints_; }
  const std::vector<double>& weights() const noexcept { return weights_; }
  std::size_t size() const noexcept { return constraints_.size(); }

 private:
  std::shared_ptr<const Schema> schema_;
  std::vector<CompiledConstraint> constraints_;
  std::vector<double> weights_;
};

// ---------------------------------------------------------------------------
// Outlier score D_M(z) = -Σ w_i φ_i(z)
// ---------------------------------------------------------------------------

// Needs no partition function, so it works for any space size.
inline double mln_score(const MlnModel& m, std::span<const ValueIndex> z) {
  m.schema().validate(z);
  double s = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double phi = detail::run_scalar(m.constraints()[i].program(), z.data()) ? 1.0 : 0.0;
    s += -m.weights()[i] * phi;
  }
  return s;
}

inline double mln_score(const MlnModel& m, const SemanticVector& z) { return mln_score(m, z.view()); }

// Row-wise mln_score over a dataset; bit-identical to the scalar path.
inline std::vector<double> score_batch(const MlnModel& m, const Dataset& data) {
  require_same_schema(m.schema(), data.schema());
  const std::size_t n = data.rows(), stride = data.stride();
  std::vector<double> out(n, 0.0);
  const ValueIndex* cells = data.cells().data();
  parallel_for_blocks(n, BlockEvaluator::kBlock, [&](std::size_t begin, std::size_t end) {
    BlockEvaluator ev;
    std::vector<std::uint8_t> sat(BlockEvaluator::kBlock);
    for (std::size_t b = begin; b < end; b += BlockEvaluator::kBlock) {
      const std::size_t len = std::min(BlockEvaluator::kBlock, end - b);
      double* acc = out.data() + b;
      for (std::size_t i = 0; i < m.size(); ++i) {
        ev.run(m.constraints()[i].program(), cells + b * stride, stride, len, sat.data());
        const double neg_w = -m.weights()[i];
        for (std::size_t r = 0; r < len; ++r) acc[r] += neg_w * static_cast<double>(sat[r]);
      }
    }
  });
  return out;
}

struct ExplanationEntry {
  std::size_t constraint_id;
  std::string source;
  bool satisfied;
  double weight;
  double contribution;  // -w_i φ_i(z)
};

struct ScoreExplanation {
  double total_score = 0.0;
  std::vector<ExplanationEntry> entries;
};

// Per-constraint decomposition of mln_score in knowledge-base order. The total
// is accumulated in the same order as mln_score, so the two agree bit-exactly.
inline ScoreExplanation explain(const MlnModel& m, std::span<const ValueIndex> z) {
  m.schema().validate(z);
  ScoreExplanation ex;
  ex.entries.reserve(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    const auto& c = m.constraints()[i];
    const bool sat = detail::run_scalar(c.program(), z.data());
    const double contribution = -m.weights()[i] * (sat ? 1.0 : 0.0);
    ex.total_score += contribution;
    ex.entries.push_back({c.id(), c.source(), sat, m.weights()[i], contribution});
  }
  return ex;
}

inline ScoreExplanation explain(const MlnModel& m, const SemanticVector& z) { return explain(m, z.view()); }

inline nlohmann::ordered_json explanation_to_json(const ScoreExplanation& ex, std::string_view sample_id) {
  nlohmann::ordered_json j;
  j["id"] = sample_id;
  j["score"] = ex.total_score;
  auto arr = nlohmann::ordered_json::array();
  for (const auto& e : ex.entries)
    arr.push_back({{"constraint_id", e.constraint_id},
                   {"constraint", e.source},
                   {"satisfied", e.satisfied},
                   {"weight", e.weight},
                   {"contribution", e.contribution}});
  j["constraints"] = std::move(arr);
  return j;
}

// ---------------------------------------------------------------------------
// Semantic space enumeration
// ---------------------------------------------------------------------------

inline std::uint64_t checked_space_size(const Schema& schema, std::uint64_t cap) {
  std::uint64_t size = 0;
  try {
    size = semantic_space_size(schema);
  } catch (const CapacityError&) {
    throw CapacityError("semantic space exceeds cap " + std::to_string(cap));
  }
  if (size > cap)
    throw CapacityError("semantic space " + std::to_string(size) + " exceeds cap " + std::to_string(cap));
  return size;
}

// Every world of the cartesian product exactly once, lexicographic in schema
// order (last concept varies fastest).
class WorldRange {
 public:
  class iterator {
   public:
    using iterator_category = std::input_iterator_tag;
    using value_type = SemanticVector;
    using difference_type = std::ptrdiff_t;
    using pointer = const SemanticVector*;
    using reference = const SemanticVector&;

    iterator() = default;
    iterator(const std::vector<std::size_t>* sizes, std::uint64_t index, std::uint64_t total)
        : sizes_(sizes), index_(index), total_(total) {
      current_.values.assign(sizes_->size(), 0);
    }

    reference operator*() const { return current_; }
    pointer operator->() const { return &current_; }
    iterator& operator++() {
      ++index_;
      for (std::size_t k = current_.values.size(); k-- > 0;) {
        if (++current_.values[k] < (*sizes_)[k]) break;
        current_.values[k] = 0;
      }
      return *this;
    }
    void operator++(int) { ++*this; }
    bool operator==(const iterator& o) const { return index_ == o.index_; }

   private:
    const std::vector<std::size_t>* sizes_ = nullptr;
    std::uint64_t index_ = 0, total_ = 0;
    SemanticVector current_;
  };

  WorldRange(const Schema& schema, std::uint64_t cap)
      : sizes_(schema.domain_sizes()), total_(checked_space_size(schema, cap)) {}

  iterator begin() const { return iterator(&sizes_, 0, total_); }
  iterator end() const { return iterator(&sizes_, total_, total_); }
  std::uint64_t size() const noexcept { return total_; }

 private:
  std::vector<std::size_t> sizes_;
  std::uint64_t total_;
};

inline WorldRange enumerate_space(const Schema& schema, std::uint64_t cap = kDefaultSpaceCap) {
  return WorldRange(schema, cap);
}

// All worlds as one row-major cell matrix, in enumeration order.
inline std::vector<ValueIndex> materialize_space(const Schema& schema, std::uint64_t cap = kDefaultSpaceCap) {
  const auto total = checked_space_size(schema, cap);
  const auto sizes = schema.domain_sizes();
  const std::size_t k = sizes.size();
  std::vector<ValueIndex> cells(total * k);
  std::vector<ValueIndex> cur(k, 0);
  for (std::uint64_t w = 0; w < total; ++w) {
    std::copy(cur.begin(), cur.end(), cells.begin() + static_cast<std::ptrdiff_t>(w * k));
    for (std::size_t j = k; j-- > 0;) {
      if (++cur[j] < sizes[j]) break;
      cur[j] = 0;
    }
  }
  return cells;
}

// ---------------------------------------------------------------------------
// Sufficient statistics and the likelihood
// ---------------------------------------------------------------------------

// The distinct satisfaction patterns (φ_1..φ_M) over Z with their world
// counts, in order of first appearance during enumeration. Since φ depends
// on z only through its pattern, these determine the partition function.
struct WorldStatistics {
  std::size_t constraints = 0;
  std::uint64_t worlds = 0;
  std::vector<std::uint8_t> patterns;  // row-major, one row per distinct pattern
  std::vector<double> multiplicity;

  std::size_t distinct() const noexcept { return multiplicity.size(); }
  std::span<const std::uint8_t> pattern(std::size_t p) const {
    return std::span<const std::uint8_t>(patterns).subspan(p * constraints, constraints);
  }
};

inline std::vector<std::uint8_t> satisfaction_matrix(std::span<const CompiledConstraint> kb,
                                                     std::span<const ValueIndex> cells, std::size_t stride) {
  const std::size_t n = stride ? cells.size() / stride : 0, m = kb.size();
  std::vector<std::uint8_t> sat(n * m);
  parallel_for_blocks(n, BlockEvaluator::kBlock, [&](std::size_t begin, std::size_t end) {
    BlockEvaluator ev;
    std::vector<std::uint8_t> buf(BlockEvaluator::kBlock);
    for (std::size_t b = begin; b < end; b += BlockEvaluator::kBlock) {
      const std::size_t len = std::min(BlockEvaluator::kBlock, end - b);
      for (std::size_t i = 0; i < m; ++i) {
        ev.run(kb[i].program(), cells.data() + b * stride, stride, len, buf.data());
        for (std::size_t r = 0; r < len; ++r) sat[(b + r) * m + i] = buf[r];
      }
    }
  });
  return sat;
}

inline WorldStatistics world_statistics(const Schema& schema, std::span<const CompiledConstraint> kb,
                                        std::uint64_t cap = kDefaultSpaceCap) {
  const auto cells = materialize_space(schema, cap);
  const std::size_t m = kb.size();
  WorldStatistics st;
  st.constraints = m;
  st.worlds = schema.size() ? cells.size() / schema.size() : 1;
  if (schema.size() == 0) {
    st.patterns.assign(m, 0);
    st.multiplicity.push_back(1.0);
    return st;
  }
  const auto sat = satisfaction_matrix(kb, cells, schema.size());
  std::unordered_map<std::string, std::size_t> seen;
  for (std::uint64_t w = 0; w < st.worlds; ++w) {
    const auto* row = sat.data() + w * m;
    std::string key(reinterpret_cast<const char*>(row), m);
    auto [it, inserted] = seen.emplace(std::move(key), st.multiplicity.size());
    if (inserted) {
      st.patterns.insert(st.patterns.end(), row, row + m);
      st.multiplicity.push_back(1.0);
    } else {
      st.multiplicity[it->second] += 1.0;
    }
  }
  return st;
}

// Per-constraint satisfied fraction over the rows, accumulated in row order.
inline std::vector<double> empirical_satisfaction(std::span<const CompiledConstraint> kb, const Dataset& data) {
  if (data.empty()) throw DataError("empty dataset");
  const auto sat = satisfaction_matrix(kb, data.cells(), data.stride());
  const std::size_t m = kb.size();
  std::vector<std::uint64_t> counts(m, 0);
  for (std::size_t r = 0; r < data.rows(); ++r)
    for (std::size_t i = 0; i < m; ++i) counts[i] += sat[r * m + i];
  std::vector<double> frac(m);
  for (std::size_t i = 0; i < m; ++i) frac[i] = static_cast<double>(counts[i]) / static_cast<double>(data.rows());
  return frac;
}

namespace detail {

// log Σ_p mult_p exp(w·pattern_p) with max shift; optionally E[φ] into `expect`.
inline double log_partition_from(const WorldStatistics& st, std::span<const double> w, std::span<double> expect) {
  const std::size_t np = st.distinct(), m = st.constraints;
  std::vector<double> energy(np);
  double emax = -std::numeric_limits<double>::infinity();
  for (std::size_t p = 0; p < np; ++p) {
    const auto pat = st.pattern(p);
    double e = 0.0;
    for (std::size_t i = 0; i < m; ++i) e += w[i] * static_cast<double>(pat[i]);
    energy[p] = e;
    emax = std::max(emax, e);
  }
  double total = 0.0;
  if (!expect.empty()) std::fill(expect.begin(), expect.end(), 0.0);
  for (std::size_t p = 0; p < np; ++p) {
    const double mass = st.multiplicity[p] * std::exp(energy[p] - emax);
    total += mass;
    if (!expect.empty()) {
      const auto pat = st.pattern(p);
      for (std::size_t i = 0; i < m; ++i) expect[i] += mass * static_cast<double>(pat[i]);
    }
  }
  if (!expect.empty())
    for (double& v : expect) v /= total;
  return emax + std::log(total);
}

}  // namespace detail

inline double log_partition(const MlnModel& m, std::uint64_t cap = kDefaultSpaceCap) {
  const auto st = world_statistics(m.schema(), m.constraints(), cap);
  return detail::log_partition_from(st, m.weights(), {});
}

// log P_M(z) = Σ w_i φ_i(z) - log Z.
inline double log_prob(const MlnModel& m, std::span<const ValueIndex> z, std::uint64_t cap = kDefaultSpaceCap) {
  m.schema().validate(z);
  const double log_z = log_partition(m, cap);
  double e = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i)
    e += m.weights()[i] * (detail::run_scalar(m.constraints()[i].program(), z.data()) ? 1.0 : 0.0);
  return e - log_z;
}

inline double log_prob(const MlnModel& m, const SemanticVector& z, std::uint64_t cap = kDefaultSpaceCap) {
  return log_prob(m, z.view(), cap);
}

// The mean negative log-likelihood as a function of the weights alone:
// NLL(w) = log Z(w) - Σ_i w_i·mean_data(φ_i), ∇_i = E_w[φ_i] - mean_data(φ_i).
// Both statistics are computed once at construction.
class NllObjective {
 public:
  NllObjective(const Schema& schema, std::span<const CompiledConstraint> kb, const Dataset& data,
               std::uint64_t cap = kDefaultSpaceCap)
      : world_(world_statistics(schema, kb, cap)), empirical_(empirical_satisfaction(kb, data)) {}

  NllObjective(WorldStatistics world, std::vector<double> empirical)
      : world_(std::move(world)), empirical_(std::move(empirical)) {}

  double operator()(std::span<const double> w, std::span<double> grad) const {
    const std::size_t m = empirical_.size();
    double nll = detail::log_partition_from(world_, w, grad);
    for (std::size_t i = 0; i < m; ++i) nll -= w[i] * empirical_[i];
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] -= empirical_[i];
    return nll;
  }

  const WorldStatistics& world() const noexcept { return world_; }
  const std::vector<double>& empirical() const noexcept { return empirical_; }

 private:
  WorldStatistics world_;
  std::vector<double> empirical_;
};

struct NllResult {
  double nll;
  std::vector<double> gradient;
};

inline NllResult nll_and_gradient(const MlnModel& m, const Dataset& data, std::uint64_t cap = kDefaultSpaceCap) {
  require_same_schema(m.schema(), data.schema());
  NllObjective obj(m.schema(), m.constraints(), data, cap);
  NllResult r{0.0, std::vector<double>(m.size())};
  r.nll = obj(m.weights(), r.gradient);
  return r;
}

// ---------------------------------------------------------------------------
// Weight fitting
// ---------------------------------------------------------------------------

struct FitConfig {
  std::size_t max_epochs = 10;
  double learning_rate = 0.01;
  double convergence_tol = 1e-9;
  double init_weight = -1.0;
  std::uint64_t space_cap = kDefaultSpaceCap;
  // Quasi-Newton iterations per epoch; one epoch is one optimizer step() call
  // in the style of full-batch L-BFGS trainers.
  std::size_t iterations_per_epoch = 20;

  void validate() const {
    if (max_epochs < 1) throw DataError("max_epochs must be >= 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw DataError("learning_rate must be > 0");
    if (!(convergence_tol >= 0.0)) throw DataError("convergence_tol must be >= 0");
    if (space_cap < 1) throw DataError("space_cap must be >= 1");
    if (iterations_per_epoch < 1) throw DataError("iterations_per_epoch must be >= 1");
    if (!std::isfinite(init_weight)) throw DataError("init_weight must be finite");
  }
};

struct EpochRecord {
  std::size_t epoch;  // 0 = initial weights
  std::size_t iterations;
  double nll;
  std::vector<double> weights;
};

struct FitResult {
  MlnModel model;
  std::vector<EpochRecord> trace;
  std::size_t epochs_used = 0;
  bool converged = false;

  double initial_nll() const { return trace.front().nll; }
  double final_nll() const { return trace.back().nll; }
};

inline FitResult fit_weights(const NllObjective& objective, const MlnModel& m, const FitConfig& cfg) {
  cfg.validate();
  std::vector<double> w0(m.size(), cfg.init_weight);
  optimize::Lbfgs::Options opts;
  opts.first_step = cfg.learning_rate;
  optimize::Lbfgs opt([&objective](std::span<const double> w, std::span<double> g) { return objective(w, g); },
                      w0, opts);
  if (!opt.finite()) throw NumericalError("non-finite NLL or gradient at iteration 0");

  std::vector<EpochRecord> trace;
  trace.push_back({0, 0, opt.value(), opt.x()});
  std::size_t iteration = 0;
  bool converged = false;
  std::size_t epoch = 0;
  while (epoch < cfg.max_epochs && !converged) {
    ++epoch;
    for (std::size_t k = 0; k < cfg.iterations_per_epoch; ++k) {
      const double before = opt.value();
      const auto status = opt.step();
      if (status == optimize::StepStatus::NonFinite)
        throw NumericalError("non-finite NLL or gradient at iteration " + std::to_string(iteration + 1));
      if (status == optimize::StepStatus::Stalled) {
        converged = true;
        break;
      }
      ++iteration;
      if (before - opt.value() < cfg.convergence_tol) {
        converged = true;
        break;
      }
    }
    trace.push_back({epoch, iteration, opt.value(), opt.x()});
  }
  return FitResult{m.with_weights(opt.x()), std::move(trace), epoch, converged};
}

// Maximum-likelihood weights for `m`'s constraints on `data`, starting from
// cfg.init_weight. Model expectations are exact over the enumerated space.
inline FitResult fit_weights(const MlnModel& m, const Dataset& data, const FitConfig& cfg = {}) {
  cfg.validate();
  require_same_schema(m.schema(), data.schema());
  NllObjective obj(m.schema(), m.constraints(), data, cfg.space_cap);
  return fit_weights(obj, m, cfg);
}

// ---------------------------------------------------------------------------
// Weights file: [{"constraint": "<text>", "weight": <real>}, ...]
// ---------------------------------------------------------------------------

inline std::string weights_to_json(const MlnModel& m) {
  auto arr = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < m.size(); ++i)
    arr.push_back({{"constraint", m.constraints()[i].source()}, {"weight", m.weights()[i]}});
  return arr.dump(2) + "\n";
}

inline MlnModel parse_weights(std::string_view text, const std::shared_ptr<const Schema>& schema) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("weights: malformed JSON: ") + e.what());
  }
  if (!doc.is_array()) throw DataError("weights: top-level value must be an array");
  std::vector<CompiledConstraint> kb;
  std::vector<double> w;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& e = doc[i];
    if (!e.is_object() || !e.contains("constraint") || !e.contains("weight") || !e["constraint"].is_string() ||
        !e["weight"].is_number())
      throw DataError("weights: entry " + std::to_string(i) + " needs string 'constraint' and numeric 'weight'");
    try {
      kb.push_back(compile(parse(e["constraint"].get<std::string>()), schema, i));
    } catch (const DataError& err) {
      throw DataError("weights: entry " + std::to_string(i) + ": " + err.what());
    }
    w.push_back(e["weight"].get<double>());
  }
  return MlnModel(schema, std::move(kb), std::move(w));
}

inline MlnModel load_weights(const std::filesystem::path& path, const std::shared_ptr<const Schema>& schema) {
  return parse_weights(io::read_file(path), schema);
}

}  // namespace mlnood
