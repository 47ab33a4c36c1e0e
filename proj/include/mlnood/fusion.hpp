#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mlnood/distribution.hpp"
#include "mlnood/error.hpp"
#include "mlnood/mln.hpp"
#include "mlnood/schema.hpp"

namespace mlnood {

// Combines the MLN outlier score with a baseline detector score normalized
// through the survival function of its ID score law:
//   fused = mln_score(z) × P(S >= detector_score)
// Every score follows the "higher = more OOD" convention.
class FusedScorer {
 public:
  FusedScorer(MlnModel model, ScoreDistribution distribution, std::optional<double> threshold = std::nullopt)
      : model_(std::move(model)), distribution_(distribution), threshold_(threshold) {}

  const MlnModel& model() const noexcept { return model_; }
  const ScoreDistribution& distribution() const noexcept { return distribution_; }
  const std::optional<double>& threshold() const noexcept { return threshold_; }

 private:
  MlnModel model_;
  ScoreDistribution distribution_;
  std::optional<double> threshold_;
};

inline double normalized_detector_score(const ScoreDistribution& d, double detector_score) {
  if (!std::isfinite(detector_score)) throw DataError("detector score must be finite");
  return d.survival(detector_score);
}

inline double fuse_score(const FusedScorer& f, std::span<const ValueIndex> z, double detector_score) {
  const double norm = normalized_detector_score(f.distribution(), detector_score);
  return mln_score(f.model(), z) * norm;
}

inline double fuse_score(const FusedScorer& f, const SemanticVector& z, double detector_score) {
  return fuse_score(f, z.view(), detector_score);
}

inline std::vector<double> fuse_batch(const FusedScorer& f, const Dataset& data) {
  if (!data.has_detector_scores()) throw DataError("fusion requires a __detector_score column");
  auto out = score_batch(f.model(), data);
  const auto det = data.detector_scores();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= normalized_detector_score(f.distribution(), det[i]);
  return out;
}

// outlier ⇔ score >= tau
inline std::vector<bool> threshold(std::span<const double> scores, double tau) {
  std::vector<bool> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] = scores[i] >= tau;
  return out;
}

}  // namespace mlnood
