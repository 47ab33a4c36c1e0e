#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "mlnood/distribution.hpp"
#include "mlnood/error.hpp"
#include "mlnood/mln.hpp"
#include "mlnood/rng.hpp"
#include "mlnood/schema.hpp"

namespace mlnood {

// Score law for synthetic detector outputs: any fitted family except `none`,
// or a point mass.
class ScoreLaw {
 public:
  static ScoreLaw from(ScoreDistribution d) {
    if (d.family() == Family::None) throw DataError("score law cannot use the 'none' family");
    return ScoreLaw(d);
  }
  static ScoreLaw constant(double v) {
    if (!std::isfinite(v)) throw DataError("constant score law needs a finite value");
    return ScoreLaw(v);
  }

  // Inverse-CDF draw from u in (0, 1).
  double draw(double u) const {
    if (const auto* d = std::get_if<ScoreDistribution>(&law_)) return d->quantile(u);
    return std::get<double>(law_);
  }

  nlohmann::ordered_json to_json() const {
    if (const auto* d = std::get_if<ScoreDistribution>(&law_)) return d->to_json();
    return {{"family", "constant"}, {"params", {{"value", std::get<double>(law_)}}}};
  }

  static ScoreLaw from_json(const nlohmann::json& j) {
    if (j.is_object() && j.value("family", "") == "constant") {
      if (!j.contains("params") || !j["params"].contains("value") || !j["params"]["value"].is_number())
        throw DataError("constant score law needs numeric params.value");
      return constant(j["params"]["value"].get<double>());
    }
    return from(ScoreDistribution::from_json(j));
  }

 private:
  explicit ScoreLaw(ScoreDistribution d) : law_(d) {}
  explicit ScoreLaw(double v) : law_(v) {}
  std::variant<ScoreDistribution, double> law_;
};

enum class OodMode { UniformOverSpace, AlternateMln };

struct DetectorModel {
  ScoreLaw id_law;
  ScoreLaw ood_law;
};

struct SynthSpec {
  SynthSpec(std::shared_ptr<const Schema> s, MlnModel truth) : schema(std::move(s)), ground_truth(std::move(truth)) {}

  std::shared_ptr<const Schema> schema;
  MlnModel ground_truth;
  std::size_t n_id = 1000;
  std::size_t n_ood = 1000;
  OodMode ood_mode = OodMode::UniformOverSpace;
  std::optional<MlnModel> alternate;  // required for AlternateMln
  std::optional<DetectorModel> detector;
  std::uint64_t seed = 0;
  std::uint64_t space_cap = kDefaultSpaceCap;

  void validate() const {
    if (n_id < 1 || n_ood < 1) throw DataError("synth: n_id and n_ood must be >= 1");
    checked_space_size(*schema, space_cap);
    if (ood_mode == OodMode::AlternateMln && !alternate)
      throw DataError("synth: alternate_mln mode needs an alternate model");
  }
};

// Stream layout: every (split, column) pair draws from its own stream, so
// changing one column's size never perturbs another column.
namespace synth_stream {
inline constexpr std::uint64_t kIdWorlds = 1;
inline constexpr std::uint64_t kOodWorlds = 2;
inline constexpr std::uint64_t kIdDetector = 3;
inline constexpr std::uint64_t kOodDetector = 4;
inline constexpr std::uint64_t of(std::uint64_t split, std::uint64_t column) { return split * 16 + column; }
}  // namespace synth_stream

namespace detail {

inline void decode_world(std::uint64_t index, const std::vector<std::size_t>& sizes, std::vector<ValueIndex>& out) {
  out.resize(sizes.size());
  for (std::size_t k = sizes.size(); k-- > 0;) {
    out[k] = static_cast<ValueIndex>(index % sizes[k]);
    index /= sizes[k];
  }
}

// Cumulative unnormalized world masses exp(w·φ(z) - max) in enumeration order.
inline std::vector<double> world_cdf(const MlnModel& m, std::uint64_t cap) {
  const auto cells = materialize_space(m.schema(), cap);
  const std::size_t k = m.schema().size();
  const std::size_t worlds = k ? cells.size() / k : 1;
  std::vector<double> energy(worlds, 0.0);
  if (k) {
    const auto sat = satisfaction_matrix(m.constraints(), cells, k);
    for (std::size_t w = 0; w < worlds; ++w)
      for (std::size_t i = 0; i < m.size(); ++i) energy[w] += m.weights()[i] * sat[w * m.size() + i];
  }
  const double emax = *std::max_element(energy.begin(), energy.end());
  std::vector<double> cum(worlds);
  double acc = 0.0;
  for (std::size_t w = 0; w < worlds; ++w) cum[w] = acc += std::exp(energy[w] - emax);
  return cum;
}

inline Dataset sample_from_cdf(const std::shared_ptr<const Schema>& schema, const std::vector<double>& cum,
                               std::size_t n, Rng& rng, bool ood, std::string_view id_prefix) {
  Dataset ds(schema, {true, false, true});
  ds.reserve(n);
  const auto sizes = schema->domain_sizes();
  std::vector<ValueIndex> z;
  const double total = cum.back();
  for (std::size_t r = 0; r < n; ++r) {
    const double u = rng.uniform() * total;
    auto it = std::upper_bound(cum.begin(), cum.end(), u);
    if (it == cum.end()) --it;
    decode_world(static_cast<std::uint64_t>(it - cum.begin()), sizes, z);
    ds.add_row(z, {std::string(id_prefix) + std::to_string(r), 0.0, ood});
  }
  return ds;
}

}  // namespace detail

// n_id vectors drawn i.i.d. from the ground-truth MLN by exact inverse CDF
// over the enumerated worlds. Rows carry __id and __is_ood=0.
inline Dataset sample_id(const SynthSpec& spec, std::uint64_t split = 0) {
  spec.validate();
  Rng rng(spec.seed, synth_stream::of(split, synth_stream::kIdWorlds));
  const auto cum = detail::world_cdf(spec.ground_truth, spec.space_cap);
  return detail::sample_from_cdf(spec.schema, cum, spec.n_id, rng, false, "id" + std::to_string(split) + "_");
}

// n_ood vectors flagged __is_ood=1, uniform over the space or from the
// alternate model.
inline Dataset sample_ood(const SynthSpec& spec, std::uint64_t split = 0) {
  spec.validate();
  Rng rng(spec.seed, synth_stream::of(split, synth_stream::kOodWorlds));
  const std::string prefix = "ood" + std::to_string(split) + "_";
  if (spec.ood_mode == OodMode::AlternateMln) {
    const auto cum = detail::world_cdf(*spec.alternate, spec.space_cap);
    return detail::sample_from_cdf(spec.schema, cum, spec.n_ood, rng, true, prefix);
  }
  const auto total = checked_space_size(*spec.schema, spec.space_cap);
  const auto sizes = spec.schema->domain_sizes();
  Dataset ds(spec.schema, {true, false, true});
  ds.reserve(spec.n_ood);
  std::vector<ValueIndex> z;
  for (std::size_t r = 0; r < spec.n_ood; ++r) {
    auto idx = static_cast<std::uint64_t>(rng.uniform() * static_cast<double>(total));
    detail::decode_world(std::min(idx, total - 1), sizes, z);
    ds.add_row(z, {prefix + std::to_string(r), 0.0, true});
  }
  return ds;
}

// Adds __detector_score: ID rows from the ID law, OOD rows from the OOD law,
// each class on its own stream in row order.
inline Dataset attach_detector_scores(const Dataset& data, const SynthSpec& spec, std::uint64_t split = 0) {
  if (!spec.detector) throw DataError("synth: spec has no detector model");
  if (!data.has_ood_flags()) throw DataError("synth: rows must carry __is_ood flags");
  Rng id_rng(spec.seed, synth_stream::of(split, synth_stream::kIdDetector));
  Rng ood_rng(spec.seed, synth_stream::of(split, synth_stream::kOodDetector));
  std::vector<double> scores(data.rows());
  for (std::size_t r = 0; r < data.rows(); ++r)
    scores[r] = data.is_ood(r) ? spec.detector->ood_law.draw(ood_rng.uniform_open())
                               : spec.detector->id_law.draw(id_rng.uniform_open());
  return data.with_detector_scores(scores);
}

// One split: ID rows followed by OOD rows (when `with_ood`), with detector
// scores when the spec has a detector model.
inline Dataset generate_split(const SynthSpec& spec, std::uint64_t split, bool with_ood) {
  auto ds = sample_id(spec, split);
  if (with_ood) ds.append(sample_ood(spec, split));
  if (spec.detector) ds = attach_detector_scores(ds, spec, split);
  return ds;
}

// ---------------------------------------------------------------------------
// JSON config
// ---------------------------------------------------------------------------

inline MlnModel model_from_json(const nlohmann::json& arr, const std::shared_ptr<const Schema>& schema) {
  return parse_weights(arr.dump(), schema);
}

inline SynthSpec parse_synth_spec(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("synth config: malformed JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("schema") || !j.contains("constraints"))
    throw DataError("synth config needs 'schema' and 'constraints'");
  // Reparse the schema with key order preserved.
  auto ordered = nlohmann::ordered_json::parse(text);
  auto schema = std::make_shared<const Schema>(Schema::from_json(ordered["schema"]));
  SynthSpec spec(schema, model_from_json(j["constraints"], schema));
  auto count = [&](const char* key, std::size_t dflt) -> std::size_t {
    if (!j.contains(key)) return dflt;
    if (!j[key].is_number_integer() || j[key].get<long long>() < 1)
      throw DataError(std::string("synth config: '") + key + "' must be a positive integer");
    return j[key].get<std::size_t>();
  };
  spec.n_id = count("n_id", spec.n_id);
  spec.n_ood = count("n_ood", spec.n_ood);
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned()) throw DataError("synth config: 'seed' must be a non-negative integer");
    spec.seed = j["seed"].get<std::uint64_t>();
  }
  if (j.contains("space_cap")) spec.space_cap = j["space_cap"].get<std::uint64_t>();
  if (j.contains("ood")) {
    const auto& o = j["ood"];
    const std::string mode = o.value("mode", "uniform_over_Z");
    if (mode == "uniform_over_Z") {
      spec.ood_mode = OodMode::UniformOverSpace;
    } else if (mode == "alternate_mln") {
      spec.ood_mode = OodMode::AlternateMln;
      if (!o.contains("constraints")) throw DataError("synth config: alternate_mln needs ood.constraints");
      spec.alternate = model_from_json(o["constraints"], schema);
    } else {
      throw DataError("synth config: unknown ood mode '" + mode + "'");
    }
  }
  if (j.contains("detector")) {
    const auto& d = j["detector"];
    if (!d.contains("id") || !d.contains("ood")) throw DataError("synth config: detector needs 'id' and 'ood' laws");
    spec.detector = DetectorModel{ScoreLaw::from_json(d["id"]), ScoreLaw::from_json(d["ood"])};
  }
  spec.validate();
  return spec;
}

}  // namespace mlnood
