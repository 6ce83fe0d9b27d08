#pragma once

#include <string>
#include <utility>
#include <vector>

#include "vidseq/codec.hpp"
#include "vidseq/types.hpp"

namespace vidseq {

// Both return 0 when the union has zero measure.
double segment_iou(const TimeSpan& a, const TimeSpan& b);
double box_iou(const BoundingBox& a, const BoundingBox& b);

inline const std::vector<double> kDvpThresholds{0.3, 0.5, 0.7, 0.9};

// One-to-one matching by descending IoU (ties: lower pred index, then lower
// gt index), keeping pairs with IoU >= threshold. Returns (pred, gt) pairs.
std::vector<std::pair<std::size_t, std::size_t>> greedy_match(const std::vector<std::vector<double>>& iou,
                                                              double threshold);
// Size of a maximum one-to-one matching among pairs with IoU >= threshold.
std::size_t optimal_match_count(const std::vector<std::vector<double>>& iou, double threshold);

std::vector<std::vector<double>> segment_iou_matrix(const EventSet& pred, const EventSet& gt);

struct LocalizationPrf {
  std::vector<double> thresholds;
  std::vector<double> precision, recall, f1;
  std::vector<std::size_t> matched;
  double mean_precision = 0, mean_recall = 0, mean_f1 = 0;
};

LocalizationPrf dvp_localization_prf(const EventSet& pred, const EventSet& gt,
                                     const std::vector<double>& thresholds = kDvpThresholds);

struct TrackingMetrics {
  std::vector<double> success_curve;  // thresholds 0, 0.05, ..., 1
  double success_auc = 0;
  double precision = 0;
  double normalized_precision = 0;
};

inline constexpr double kPrecisionPixels = 20.0;
inline constexpr double kNormalizedPrecisionThreshold = 0.2;

// Frame i succeeds at threshold t when IoU > 0 and IoU >= t.
TrackingMetrics tracking_metrics(const Trajectory& pred, const Trajectory& gt);

// Sentence BLEU-4 with add-one smoothing for n >= 2 and brevity penalty.
double bleu4(const std::vector<std::string>& candidate, const std::vector<std::string>& reference);

}  // namespace vidseq
