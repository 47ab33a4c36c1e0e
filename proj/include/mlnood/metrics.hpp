#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mlnood/error.hpp"
#include "mlnood/io.hpp"
#include "mlnood/schema.hpp"

namespace mlnood {

namespace detail {

inline void require_scores(std::span<const double> id_scores, std::span<const double> ood_scores) {
  if (id_scores.empty()) throw DataError("no ID scores");
  if (ood_scores.empty()) throw DataError("no OOD scores");
  auto bad = [](double v) { return std::isnan(v); };
  if (std::any_of(id_scores.begin(), id_scores.end(), bad) || std::any_of(ood_scores.begin(), ood_scores.end(), bad))
    throw DataError("scores contain NaN");
}

// (score, is_positive) sorted by descending score.
inline std::vector<std::pair<double, bool>> ranked(std::span<const double> pos, std::span<const double> neg) {
  std::vector<std::pair<double, bool>> all;
  all.reserve(pos.size() + neg.size());
  for (double s : pos) all.emplace_back(s, true);
  for (double s : neg) all.emplace_back(s, false);
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  return all;
}

}  // namespace detail

// P(D(x_ood) > D(x_id)) with ties counted 1/2 (Mann-Whitney), via one sort.
inline double auroc(std::span<const double> id_scores, std::span<const double> ood_scores) {
  detail::require_scores(id_scores, ood_scores);
  auto all = detail::ranked(ood_scores, id_scores);
  // Walk from the lowest score up; twice the U statistic stays integral.
  std::uint64_t twice_u = 0, id_below = 0;
  std::size_t i = all.size();
  while (i > 0) {
    std::size_t j = i;
    std::uint64_t g_ood = 0, g_id = 0;
    while (j > 0 && all[j - 1].first == all[i - 1].first) {
      (all[j - 1].second ? g_ood : g_id)++;
      --j;
    }
    twice_u += 2 * g_ood * id_below + g_ood * g_id;
    id_below += g_id;
    i = j;
  }
  const double pairs = static_cast<double>(id_scores.size()) * static_cast<double>(ood_scores.size());
  return static_cast<double>(twice_u) / 2.0 / pairs;
}

// FPR on ID at the largest threshold τ* with fraction(ood >= τ*) >= tpr_target.
inline double fpr_at_tpr(std::span<const double> id_scores, std::span<const double> ood_scores,
                         double tpr_target = 0.95) {
  detail::require_scores(id_scores, ood_scores);
  if (!(tpr_target > 0.0 && tpr_target <= 1.0)) throw DataError("tpr_target must lie in (0, 1]");
  std::vector<double> ood(ood_scores.begin(), ood_scores.end());
  std::sort(ood.begin(), ood.end(), std::greater<>());
  const std::size_t n = ood.size();
  const double nd = static_cast<double>(n);
  // Smallest k with k/n >= target, evaluated in the same arithmetic as the ratio.
  auto k = static_cast<std::size_t>(std::ceil(tpr_target * nd));
  k = std::clamp<std::size_t>(k, 1, n);
  while (k > 1 && static_cast<double>(k - 1) / nd >= tpr_target) --k;
  while (k < n && static_cast<double>(k) / nd < tpr_target) ++k;
  const double tau = ood[k - 1];
  const auto fp = std::count_if(id_scores.begin(), id_scores.end(), [tau](double s) { return s >= tau; });
  return static_cast<double>(fp) / static_cast<double>(id_scores.size());
}

// Step-interpolated area under the precision-recall curve: Σ ΔR·P over the
// distinct thresholds, positives ranked by higher score.
inline double average_precision(std::span<const double> positives, std::span<const double> negatives) {
  if (positives.empty() || negatives.empty()) throw DataError("average precision needs both classes");
  const auto all = detail::ranked(positives, negatives);
  const double n_pos = static_cast<double>(positives.size());
  std::uint64_t tp = 0, fp = 0;
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) (all[j].second ? tp : fp)++, ++j;
    const double recall = static_cast<double>(tp) / n_pos;
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return ap;
}

enum class PositiveClass { Id, Ood };

// AUPR with OOD as positive, or ID as positive ranked by negated outlier score.
inline double aupr(std::span<const double> id_scores, std::span<const double> ood_scores, PositiveClass positive) {
  detail::require_scores(id_scores, ood_scores);
  if (positive == PositiveClass::Ood) return average_precision(ood_scores, id_scores);
  std::vector<double> pos(id_scores.size()), neg(ood_scores.size());
  std::transform(id_scores.begin(), id_scores.end(), pos.begin(), [](double s) { return -s; });
  std::transform(ood_scores.begin(), ood_scores.end(), neg.begin(), [](double s) { return -s; });
  return average_precision(pos, neg);
}

struct EvalResult {
  double auroc = 0.0;
  double aupr_id = 0.0;
  double aupr_ood = 0.0;
  double fpr95 = 0.0;
  std::size_t n_id = 0;
  std::size_t n_ood = 0;

  nlohmann::ordered_json to_json() const {
    return {{"auroc", auroc}, {"aupr_id", aupr_id}, {"aupr_ood", aupr_ood},
            {"fpr95", fpr95}, {"n_id", n_id},       {"n_ood", n_ood}};
  }

  static std::string csv_header() { return "auroc,aupr_id,aupr_ood,fpr95,n_id,n_ood\n"; }
  std::string csv_row() const {
    return io::format_double(auroc) + ',' + io::format_double(aupr_id) + ',' + io::format_double(aupr_ood) + ',' +
           io::format_double(fpr95) + ',' + std::to_string(n_id) + ',' + std::to_string(n_ood) + '\n';
  }
};

inline EvalResult evaluate_scores(std::span<const double> id_scores, std::span<const double> ood_scores) {
  EvalResult r;
  r.auroc = auroc(id_scores, ood_scores);
  r.aupr_id = aupr(id_scores, ood_scores, PositiveClass::Id);
  r.aupr_ood = aupr(id_scores, ood_scores, PositiveClass::Ood);
  r.fpr95 = fpr_at_tpr(id_scores, ood_scores, 0.95);
  r.n_id = id_scores.size();
  r.n_ood = ood_scores.size();
  return r;
}

inline std::pair<std::vector<double>, std::vector<double>> split_by_class(const Dataset& data,
                                                                          std::span<const double> scores) {
  if (!data.has_ood_flags()) throw DataError("evaluation requires an __is_ood column");
  if (scores.size() != data.rows())
    throw DataError("got " + std::to_string(scores.size()) + " scores for " + std::to_string(data.rows()) + " rows");
  std::vector<double> id, ood;
  for (std::size_t i = 0; i < data.rows(); ++i) (data.is_ood(i) ? ood : id).push_back(scores[i]);
  return {std::move(id), std::move(ood)};
}

inline EvalResult evaluate(const Dataset& data, std::span<const double> scores) {
  auto [id, ood] = split_by_class(data, scores);
  return evaluate_scores(id, ood);
}

}  // namespace mlnood
