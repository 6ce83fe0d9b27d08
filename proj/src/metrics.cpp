#include "vidseq/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "vidseq/error.hpp"

namespace vidseq {

double segment_iou(const TimeSpan& a, const TimeSpan& b) {
  const double inter = std::max(0.0, std::min(a.end(), b.end()) - std::max(a.start, b.start));
  const double uni = a.duration + b.duration - inter;
  return uni > 0 ? inter / uni : 0.0;
}

double box_iou(const BoundingBox& a, const BoundingBox& b) {
  const double iw = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double ih = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

std::vector<std::pair<std::size_t, std::size_t>> greedy_match(const std::vector<std::vector<double>>& iou,
                                                              double threshold) {
  struct Cand {
    double v;
    std::size_t p, g;
  };
  std::vector<Cand> cands;
  for (std::size_t p = 0; p < iou.size(); ++p)
    for (std::size_t g = 0; g < iou[p].size(); ++g)
      if (iou[p][g] >= threshold && iou[p][g] > 0) cands.push_back({iou[p][g], p, g});
  std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) { return a.v > b.v; });
  std::vector<bool> used_p(iou.size(), false);
  std::vector<bool> used_g(iou.empty() ? 0 : iou[0].size(), false);
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (const auto& c : cands) {
    if (used_p[c.p] || used_g[c.g]) continue;
    used_p[c.p] = used_g[c.g] = true;
    out.emplace_back(c.p, c.g);
  }
  return out;
}

std::size_t optimal_match_count(const std::vector<std::vector<double>>& iou, double threshold) {
  // augmenting paths (Kuhn)
  const std::size_t np = iou.size();
  const std::size_t ng = np ? iou[0].size() : 0;
  std::vector<long> owner(ng, -1);
  std::size_t count = 0;
  for (std::size_t p = 0; p < np; ++p) {
    std::vector<bool> seen(ng, false);
    auto try_assign = [&](auto&& self, std::size_t u) -> bool {
      for (std::size_t g = 0; g < ng; ++g) {
        if (seen[g] || !(iou[u][g] >= threshold && iou[u][g] > 0)) continue;
        seen[g] = true;
        if (owner[g] < 0 || self(self, static_cast<std::size_t>(owner[g]))) {
          owner[g] = static_cast<long>(u);
          return true;
        }
      }
      return false;
    };
    if (try_assign(try_assign, p)) ++count;
  }
  return count;
}

std::vector<std::vector<double>> segment_iou_matrix(const EventSet& pred, const EventSet& gt) {
  std::vector<std::vector<double>> m(pred.size(), std::vector<double>(gt.size()));
  for (std::size_t p = 0; p < pred.size(); ++p)
    for (std::size_t g = 0; g < gt.size(); ++g) m[p][g] = segment_iou(pred[p].span, gt[g].span);
  return m;
}

LocalizationPrf dvp_localization_prf(const EventSet& pred, const EventSet& gt, const std::vector<double>& thresholds) {
  LocalizationPrf r;
  r.thresholds = thresholds;
  const auto iou = segment_iou_matrix(pred, gt);
  for (double t : thresholds) {
    const std::size_t m = greedy_match(iou, t).size();
    const double p = pred.empty() ? 0.0 : static_cast<double>(m) / pred.size();
    const double rc = gt.empty() ? 0.0 : static_cast<double>(m) / gt.size();
    r.matched.push_back(m);
    r.precision.push_back(p);
    r.recall.push_back(rc);
    r.f1.push_back(p + rc > 0 ? 2 * p * rc / (p + rc) : 0.0);
  }
  if (!thresholds.empty()) {
    const double n = static_cast<double>(thresholds.size());
    r.mean_precision = std::accumulate(r.precision.begin(), r.precision.end(), 0.0) / n;
    r.mean_recall = std::accumulate(r.recall.begin(), r.recall.end(), 0.0) / n;
    r.mean_f1 = std::accumulate(r.f1.begin(), r.f1.end(), 0.0) / n;
  }
  return r;
}

TrackingMetrics tracking_metrics(const Trajectory& pred, const Trajectory& gt) {
  if (pred.size() != gt.size()) throw InputError("tracking_metrics: trajectory lengths differ");
  TrackingMetrics m;
  const std::size_t n = gt.size();
  if (n == 0) throw InputError("tracking_metrics: empty trajectory");
  std::vector<double> ious(n);
  std::size_t close = 0, close_norm = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ious[i] = box_iou(pred[i], gt[i]);
    const double dx = pred[i].center_x() - gt[i].center_x();
    const double dy = pred[i].center_y() - gt[i].center_y();
    if (std::hypot(dx, dy) <= kPrecisionPixels) ++close;
    const double w = std::max(gt[i].width(), 1e-12), h = std::max(gt[i].height(), 1e-12);
    if (std::hypot(dx / w, dy / h) <= kNormalizedPrecisionThreshold) ++close_norm;
  }
  for (int k = 0; k <= 20; ++k) {
    const double t = k * 0.05;
    std::size_t ok = 0;
    for (double v : ious)
      if (v > 0 && v >= t) ++ok;
    m.success_curve.push_back(static_cast<double>(ok) / n);
  }
  m.success_auc = std::accumulate(m.success_curve.begin(), m.success_curve.end(), 0.0) / m.success_curve.size();
  m.precision = static_cast<double>(close) / n;
  m.normalized_precision = static_cast<double>(close_norm) / n;
  return m;
}

double bleu4(const std::vector<std::string>& candidate, const std::vector<std::string>& reference) {
  if (reference.empty()) throw InputError("bleu4: empty reference");
  if (candidate.empty()) return 0.0;
  double log_sum = 0;
  for (std::size_t n = 1; n <= 4; ++n) {
    std::map<std::vector<std::string>, int> ref_counts, cand_counts;
    for (std::size_t i = 0; i + n <= reference.size(); ++i)
      ++ref_counts[{reference.begin() + i, reference.begin() + i + n}];
    for (std::size_t i = 0; i + n <= candidate.size(); ++i)
      ++cand_counts[{candidate.begin() + i, candidate.begin() + i + n}];
    double clipped = 0, total = 0;
    for (const auto& [gram, c] : cand_counts) {
      total += c;
      auto it = ref_counts.find(gram);
      if (it != ref_counts.end()) clipped += std::min(c, it->second);
    }
    if (n >= 2) {
      clipped += 1;
      total += 1;
    }
    if (clipped == 0 || total == 0) return 0.0;
    log_sum += std::log(clipped / total);
  }
  const double c = static_cast<double>(candidate.size()), r = static_cast<double>(reference.size());
  const double bp = c >= r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / 4.0);
}

}  // namespace vidseq
