#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mlnood/error.hpp"
#include "mlnood/io.hpp"

namespace mlnood {

using ValueIndex = std::uint32_t;

inline bool is_identifier(std::string_view s) {
  if (s.empty()) return false;
  auto head = [](char c) { return c == '_' || (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z'); };
  if (!head(s.front())) return false;
  for (char c : s.substr(1))
    if (!head(c) && !(c >= '0' && c <= '9')) return false;
  return true;
}

// Words reserved by the constraint language; they cannot name concepts or values.
inline bool is_keyword(std::string_view s) {
  return s == "and" || s == "or" || s == "xor" || s == "not";
}

struct Concept {
  std::string name;
  std::vector<std::string> values;

  bool is_binary() const { return values.size() == 2 && values[0] == "false" && values[1] == "true"; }

  std::optional<ValueIndex> value_index(std::string_view v) const {
    for (std::size_t i = 0; i < values.size(); ++i)
      if (values[i] == v) return static_cast<ValueIndex>(i);
    return std::nullopt;
  }

  bool operator==(const Concept&) const = default;
};

// The finite semantic space: an ordered list of concepts, each with a finite
// domain. Concept order is fixed by construction and shared by every vector,
// enumeration and weight file built against the schema.
class Schema {
 public:
  Schema() = default;

  explicit Schema(std::vector<Concept> concepts) : concepts_(std::move(concepts)) {
    for (std::size_t i = 0; i < concepts_.size(); ++i) {
      auto& c = concepts_[i];
      if (!is_identifier(c.name) || is_keyword(c.name))
        throw DataError("invalid concept name '" + c.name + "'");
      if (!index_.emplace(c.name, i).second) throw DataError("duplicate concept name '" + c.name + "'");
      if (c.values.size() < 2)
        throw DataError("concept '" + c.name + "': domain needs at least 2 values, got " +
                        std::to_string(c.values.size()));
      std::unordered_set<std::string> seen;
      for (const auto& v : c.values) {
        if (v.empty()) throw DataError("concept '" + c.name + "': empty value");
        if (is_keyword(v)) throw DataError("concept '" + c.name + "': value '" + v + "' is a keyword");
        if (!seen.insert(v).second)
          throw DataError("concept '" + c.name + "': duplicate value '" + v + "'");
      }
      if (seen.count("false") && seen.count("true") && c.values.size() == 2 && !c.is_binary())
        throw DataError("concept '" + c.name + "': binary domain must be ordered [false, true]");
    }
  }

  // Keys are concept names in document order; values are arrays of value
  // strings or the shorthand "binary".
  static Schema from_json(const nlohmann::ordered_json& doc) {
    if (!doc.is_object()) throw DataError("schema: top-level JSON value must be an object");
    std::vector<Concept> concepts;
    for (const auto& [name, dom] : doc.items()) {
      Concept c{name, {}};
      if (dom.is_string()) {
        if (dom.get<std::string>() != "binary")
          throw DataError("schema: concept '" + name + "': string domain must be \"binary\"");
        c.values = {"false", "true"};
      } else if (dom.is_array()) {
        for (const auto& v : dom) {
          if (!v.is_string()) throw DataError("schema: concept '" + name + "': values must be strings");
          c.values.push_back(v.get<std::string>());
        }
      } else {
        throw DataError("schema: concept '" + name + "': domain must be an array or \"binary\"");
      }
      concepts.push_back(std::move(c));
    }
    return Schema(std::move(concepts));
  }

  static Schema parse(std::string_view text) {
    // The JSON parser merges duplicate keys silently; catch them at depth 1.
    std::unordered_set<std::string> keys;
    std::optional<std::string> duplicate;
    auto on_event = [&](int depth, nlohmann::ordered_json::parse_event_t event,
                        nlohmann::ordered_json& parsed) {
      if (event == nlohmann::ordered_json::parse_event_t::key && depth == 1 && parsed.is_string()) {
        if (!keys.insert(parsed.get<std::string>()).second && !duplicate)
          duplicate = parsed.get<std::string>();
      }
      return true;
    };
    nlohmann::ordered_json doc;
    try {
      doc = nlohmann::ordered_json::parse(text, on_event);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("schema: malformed JSON: ") + e.what());
    }
    if (duplicate) throw DataError("duplicate concept name '" + *duplicate + "'");
    return from_json(doc);
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json doc = nlohmann::ordered_json::object();
    for (const auto& c : concepts_) {
      if (c.is_binary()) doc[c.name] = "binary";
      else doc[c.name] = c.values;
    }
    return doc;
  }

  std::size_t size() const noexcept { return concepts_.size(); }
  const Concept& concept_at(std::size_t i) const { return concepts_.at(i); }
  const std::vector<Concept>& concepts() const noexcept { return concepts_; }

  std::optional<std::size_t> find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::vector<std::size_t> domain_sizes() const {
    std::vector<std::size_t> out;
    out.reserve(concepts_.size());
    for (const auto& c : concepts_) out.push_back(c.values.size());
    return out;
  }

  // Throws DataError naming the offending position if `z` does not conform.
  void validate(std::span<const ValueIndex> z) const {
    if (z.size() != concepts_.size())
      throw DataError("semantic vector has " + std::to_string(z.size()) + " entries, schema has " +
                      std::to_string(concepts_.size()) + " concepts");
    for (std::size_t i = 0; i < z.size(); ++i)
      if (z[i] >= concepts_[i].values.size())
        throw DataError("semantic vector entry " + std::to_string(i) + " (" + concepts_[i].name +
                        ") has value index " + std::to_string(z[i]) + " outside domain of size " +
                        std::to_string(concepts_[i].values.size()));
  }

  bool operator==(const Schema& o) const { return concepts_ == o.concepts_; }

 private:
  std::vector<Concept> concepts_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline Schema load_schema(const std::filesystem::path& path) { return Schema::parse(io::read_file(path)); }

// |Z|, the number of possible worlds. Throws CapacityError instead of wrapping.
inline std::uint64_t semantic_space_size(const Schema& schema) {
  std::uint64_t n = 1;
  for (const auto& c : schema.concepts()) {
    const std::uint64_t d = c.values.size();
    if (n > std::numeric_limits<std::uint64_t>::max() / d)
      throw CapacityError("semantic space size overflows 64-bit integer");
    n *= d;
  }
  return n;
}

// One input's concept assignment, stored as domain indices in schema order.
struct SemanticVector {
  std::vector<ValueIndex> values;

  std::span<const ValueIndex> view() const noexcept { return values; }
  bool operator==(const SemanticVector&) const = default;
};

inline SemanticVector make_vector(const Schema& schema, const std::vector<std::string>& values) {
  if (values.size() != schema.size()) throw DataError("vector length does not match schema");
  SemanticVector z;
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto idx = schema.concept_at(i).value_index(values[i]);
    if (!idx) throw DataError("value '" + values[i] + "' not in domain of '" + schema.concept_at(i).name + "'");
    z.values.push_back(*idx);
  }
  return z;
}

inline constexpr std::string_view kIdColumn = "__id";
inline constexpr std::string_view kScoreColumn = "__detector_score";
inline constexpr std::string_view kOodColumn = "__is_ood";

// Optional per-row columns of a Dataset.
struct DatasetRowExtras {
  std::optional<std::string> id;
  double detector_score = std::numeric_limits<double>::quiet_NaN();
  bool is_ood = false;
};

// Rows of semantic vectors with optional per-row detector scores and ID/OOD
// flags. Cells are stored row-major as domain indices.
class Dataset {
 public:
  struct Columns {
    bool ids = false;
    bool detector_scores = false;
    bool ood_flags = false;
  };

  Dataset(std::shared_ptr<const Schema> schema, Columns columns)
      : schema_(std::move(schema)), columns_(columns) {
    if (!schema_) throw DataError("dataset requires a schema");
  }

  const Schema& schema() const noexcept { return *schema_; }
  const std::shared_ptr<const Schema>& schema_ptr() const noexcept { return schema_; }
  const Columns& columns() const noexcept { return columns_; }
  bool has_ids() const noexcept { return columns_.ids; }
  bool has_detector_scores() const noexcept { return columns_.detector_scores; }
  bool has_ood_flags() const noexcept { return columns_.ood_flags; }

  std::size_t rows() const noexcept { return ids_.size(); }
  bool empty() const noexcept { return ids_.empty(); }
  std::size_t stride() const noexcept { return schema_->size(); }

  std::span<const ValueIndex> row(std::size_t i) const {
    return std::span<const ValueIndex>(cells_).subspan(i * stride(), stride());
  }
  std::span<const ValueIndex> cells() const noexcept { return cells_; }

  // Row identifier; rows without an explicit `__id` are named by their index.
  const std::string& id(std::size_t i) const { return ids_.at(i); }
  double detector_score(std::size_t i) const {
    require_scores();
    return scores_.at(i);
  }
  std::span<const double> detector_scores() const {
    require_scores();
    return scores_;
  }
  bool is_ood(std::size_t i) const {
    require_flags();
    return flags_.at(i) != 0;
  }

  using RowExtras = DatasetRowExtras;

  void add_row(std::span<const ValueIndex> z, RowExtras extras = {}) {
    schema_->validate(z);
    std::string id;
    if (columns_.ids) {
      if (!extras.id) throw DataError("row " + std::to_string(rows()) + ": missing sample id");
      id = std::move(*extras.id);
    } else {
      id = std::to_string(rows());
    }
    if (columns_.detector_scores && !std::isfinite(extras.detector_score))
      throw DataError("row " + std::to_string(rows()) + ": detector score must be finite");
    if (!id_set_.insert(id).second) throw DataError("duplicate sample id '" + id + "'");
    cells_.insert(cells_.end(), z.begin(), z.end());
    ids_.push_back(std::move(id));
    if (columns_.detector_scores) scores_.push_back(extras.detector_score);
    if (columns_.ood_flags) flags_.push_back(extras.is_ood ? 1 : 0);
  }

  void reserve(std::size_t n) {
    cells_.reserve(n * stride());
    ids_.reserve(n);
    if (columns_.detector_scores) scores_.reserve(n);
    if (columns_.ood_flags) flags_.reserve(n);
  }

  // Rows whose flag equals `ood`, preserving order and all columns.
  Dataset select_class(bool ood) const {
    require_flags();
    Dataset out(schema_, columns_);
    for (std::size_t i = 0; i < rows(); ++i)
      if ((flags_[i] != 0) == ood) out.add_row(row(i), extras(i));
    return out;
  }

  // Copy with the detector score column replaced (or added).
  Dataset with_detector_scores(std::span<const double> scores) const {
    if (scores.size() != rows()) throw DataError("detector score count does not match row count");
    auto cols = columns_;
    cols.detector_scores = true;
    Dataset out(schema_, cols);
    out.reserve(rows());
    for (std::size_t i = 0; i < rows(); ++i) {
      auto e = extras(i);
      e.detector_score = scores[i];
      out.add_row(row(i), std::move(e));
    }
    return out;
  }

  RowExtras extras(std::size_t i) const {
    RowExtras e;
    if (columns_.ids) e.id = ids_[i];
    if (columns_.detector_scores) e.detector_score = scores_[i];
    if (columns_.ood_flags) e.is_ood = flags_[i] != 0;
    return e;
  }

  // Appends `other`'s rows; column sets and schema must match.
  void append(const Dataset& other) {
    if (!(*other.schema_ == *schema_)) throw DataError("cannot append datasets over different schemas");
    if (other.columns_.detector_scores != columns_.detector_scores ||
        other.columns_.ood_flags != columns_.ood_flags || other.columns_.ids != columns_.ids)
      throw DataError("cannot append datasets with different column sets");
    for (std::size_t i = 0; i < other.rows(); ++i) add_row(other.row(i), other.extras(i));
  }

  std::string to_csv() const {
    std::string out;
    bool first = true;
    auto sep = [&] {
      if (!first) out += ',';
      first = false;
    };
    if (columns_.ids) sep(), out += kIdColumn;
    for (const auto& c : schema_->concepts()) sep(), out += c.name;
    if (columns_.detector_scores) sep(), out += kScoreColumn;
    if (columns_.ood_flags) sep(), out += kOodColumn;
    out += '\n';
    for (std::size_t r = 0; r < rows(); ++r) {
      first = true;
      if (columns_.ids) sep(), out += io::csv_escape(ids_[r]);
      auto z = row(r);
      for (std::size_t c = 0; c < z.size(); ++c) sep(), out += schema_->concept_at(c).values[z[c]];
      if (columns_.detector_scores) sep(), out += io::format_double(scores_[r]);
      if (columns_.ood_flags) sep(), out += flags_[r] ? '1' : '0';
      out += '\n';
    }
    return out;
  }

 private:
  void require_scores() const {
    if (!columns_.detector_scores) throw DataError("dataset has no __detector_score column");
  }
  void require_flags() const {
    if (!columns_.ood_flags) throw DataError("dataset has no __is_ood column");
  }

  std::shared_ptr<const Schema> schema_;
  Columns columns_;
  std::vector<ValueIndex> cells_;
  std::vector<std::string> ids_;
  std::vector<double> scores_;
  std::vector<std::uint8_t> flags_;
  std::unordered_set<std::string> id_set_;
};

inline Dataset parse_dataset(std::string_view text, std::shared_ptr<const Schema> schema) {
  auto table = io::parse_csv(text);
  if (table.empty()) throw DataError("dataset: missing header row");
  const auto& header = table.front();

  constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> concept_col(schema->size(), npos);
  std::size_t id_col = npos, score_col = npos, ood_col = npos;
  for (std::size_t j = 0; j < header.size(); ++j) {
    const auto& name = header[j];
    std::size_t* slot = nullptr;
    if (name == kIdColumn) slot = &id_col;
    else if (name == kScoreColumn) slot = &score_col;
    else if (name == kOodColumn) slot = &ood_col;
    else if (auto c = schema->find(name)) slot = &concept_col[*c];
    else throw DataError("dataset: unknown column '" + name + "'");
    if (*slot != npos) throw DataError("dataset: duplicate column '" + name + "'");
    *slot = j;
  }
  for (std::size_t c = 0; c < concept_col.size(); ++c)
    if (concept_col[c] == npos)
      throw DataError("dataset: missing column for concept '" + schema->concept_at(c).name + "'");

  Dataset ds(schema, {id_col != npos, score_col != npos, ood_col != npos});
  ds.reserve(table.size() - 1);
  std::vector<ValueIndex> z(schema->size());
  for (std::size_t r = 1; r < table.size(); ++r) {
    const auto& cells = table[r];
    const std::string where = "dataset line " + std::to_string(r + 1);
    if (cells.size() == 1 && cells[0].empty()) continue;  // blank line
    if (cells.size() != header.size())
      throw DataError(where + ": expected " + std::to_string(header.size()) + " fields, got " +
                      std::to_string(cells.size()));
    for (std::size_t c = 0; c < schema->size(); ++c) {
      const auto& concept_def = schema->concept_at(c);
      const auto& cell = cells[concept_col[c]];
      if (cell.empty()) throw DataError(where + ", column '" + concept_def.name + "': empty value");
      auto idx = concept_def.value_index(cell);
      if (!idx) {
        std::string dom;
        for (const auto& v : concept_def.values) dom += (dom.empty() ? "" : ", ") + v;
        throw DataError(where + ", column '" + concept_def.name + "': value '" + cell +
                        "' not in domain {" + dom + "}");
      }
      z[c] = *idx;
    }
    Dataset::RowExtras extras;
    if (id_col != npos) extras.id = cells[id_col];
    if (score_col != npos) {
      const auto& cell = cells[score_col];
      char* end = nullptr;
      double v = cell.empty() ? 0.0 : std::strtod(cell.c_str(), &end);
      if (cell.empty() || end != cell.c_str() + cell.size() || !std::isfinite(v))
        throw DataError(where + ", column '__detector_score': not a finite number: '" + cell + "'");
      extras.detector_score = v;
    }
    if (ood_col != npos) {
      const auto& cell = cells[ood_col];
      if (cell != "0" && cell != "1")
        throw DataError(where + ", column '__is_ood': expected 0 or 1, got '" + cell + "'");
      extras.is_ood = cell == "1";
    }
    try {
      ds.add_row(z, std::move(extras));
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    }
  }
  return ds;
}

inline Dataset load_dataset(const std::filesystem::path& path, std::shared_ptr<const Schema> schema) {
  return parse_dataset(io::read_file(path), std::move(schema));
}

}  // namespace mlnood
