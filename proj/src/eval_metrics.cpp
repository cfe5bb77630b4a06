#include "desimpl/eval_metrics.hpp"

#include <algorithm>
#include <map>
#include <string>

#include <fmt/format.h>

#include "desimpl/box_fusion.hpp"

namespace desimpl {

std::size_t MatchResult::tp_count() const {
  return static_cast<std::size_t>(std::count(is_tp.begin(), is_tp.end(), true));
}

MatchResult match_tp_fp(const LabelSet& dets, const LabelSet& gt, double iou_thr) {
  if (dets.image_id != gt.image_id) {
    throw ValidationError(
        fmt::format("cannot match detections of '{}' against ground truth of '{}'", dets.image_id, gt.image_id));
  }
  MatchResult r;
  r.iou_threshold = iou_thr;
  r.detections = dets.detections;
  sort_detections(r.detections);
  r.is_tp.assign(r.detections.size(), false);
  r.matched_gt.assign(r.detections.size(), std::nullopt);
  r.gt_matched.assign(gt.detections.size(), false);

  for (std::size_t i = 0; i < r.detections.size(); ++i) {
    const auto& d = r.detections[i];
    std::optional<std::size_t> best;
    double best_iou = -1.0;
    for (std::size_t g = 0; g < gt.detections.size(); ++g) {
      if (r.gt_matched[g] || gt.detections[g].class_id != d.class_id) continue;
      const double overlap = iou(d.bbox, gt.detections[g].bbox);
      if (overlap > best_iou) {
        best_iou = overlap;
        best = g;
      }
    }
    if (best && best_iou >= iou_thr) {
      r.is_tp[i] = true;
      r.matched_gt[i] = best;
      r.gt_matched[*best] = true;
    }
  }
  return r;
}

namespace {

struct Scored {
  double score;
  int class_id;
  bool tp;
};

struct Collected {
  std::vector<Scored> dets;
  std::map<int, std::size_t> gt_per_class;
};

Collected collect(std::span<const LabelSet> dets, std::span<const LabelSet> gts, double iou_thr) {
  std::map<std::string, const LabelSet*> gt_by_id;
  for (const auto& g : gts) {
    gt_by_id[g.image_id] = &g;
  }
  Collected c;
  for (const auto& g : gts) {
    for (const auto& d : g.detections) ++c.gt_per_class[d.class_id];
  }
  for (const auto& set : dets) {
    const auto it = gt_by_id.find(set.image_id);
    const LabelSet empty{set.image_id, {}, LabelKind::ground_truth};
    const LabelSet& gt = it == gt_by_id.end() ? empty : *it->second;
    const auto m = match_tp_fp(set, gt, iou_thr);
    for (std::size_t i = 0; i < m.detections.size(); ++i) {
      c.dets.push_back({m.detections[i].score, m.detections[i].class_id, m.is_tp[i]});
    }
  }
  return c;
}

PRCurve curve_for(const Collected& c, int class_id) {
  PRCurve curve;
  if (auto it = c.gt_per_class.find(class_id); it != c.gt_per_class.end()) curve.gt_count = it->second;
  std::vector<Scored> mine;
  for (const auto& d : c.dets) {
    if (d.class_id == class_id) mine.push_back(d);
  }
  curve.detection_count = mine.size();
  std::stable_sort(mine.begin(), mine.end(), [](const Scored& a, const Scored& b) { return a.score > b.score; });

  if (curve.gt_count == 0) {
    if (!mine.empty()) curve.ap = 0.0;
    return curve;
  }

  const double npos = static_cast<double>(curve.gt_count);
  std::size_t tp = 0;
  std::size_t fp = 0;
  for (std::size_t i = 0; i < mine.size(); ++i) {
    (mine[i].tp ? tp : fp) += 1;
    const bool group_end = i + 1 == mine.size() || mine[i + 1].score != mine[i].score;
    if (!group_end) continue;
    curve.thresholds.push_back(mine[i].score);
    curve.precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    curve.recall.push_back(static_cast<double>(tp) / npos);
  }

  std::vector<double> envelope = curve.precision;
  for (std::size_t i = envelope.size(); i-- > 1;) envelope[i - 1] = std::max(envelope[i - 1], envelope[i]);
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < envelope.size(); ++i) {
    ap += (curve.recall[i] - prev_recall) * envelope[i];
    prev_recall = curve.recall[i];
  }
  curve.ap = ap;
  return curve;
}

}  // namespace

PRCurve average_precision(std::span<const LabelSet> dets, std::span<const LabelSet> gts, int class_id,
                          double iou_thr) {
  return curve_for(collect(dets, gts, iou_thr), class_id);
}

MapResult map50(std::span<const LabelSet> dets, std::span<const LabelSet> gts, int class_count) {
  const auto c = collect(dets, gts, 0.5);
  MapResult r;
  double sum = 0.0;
  std::size_t defined = 0;
  for (int k = 0; k < class_count; ++k) {
    const auto curve = curve_for(c, k);
    r.per_class.push_back(curve.ap);
    if (curve.ap) {
      sum += *curve.ap;
      ++defined;
    }
  }
  if (defined == 0) throw ValidationError("mAP undefined: no class has ground truth or detections");
  r.map = sum / static_cast<double>(defined);
  return r;
}

double FPHistogram::rate(std::size_t bin) const {
  return total[bin] == 0 ? 0.0 : static_cast<double>(fp[bin]) / static_cast<double>(total[bin]);
}

double FPHistogram::aggregate_rate(double threshold, bool below) const {
  std::size_t f = 0;
  std::size_t t = 0;
  for (std::size_t b = 0; b < bins(); ++b) {
    const bool inside = below ? edges[b + 1] <= threshold : edges[b] >= threshold;
    if (!inside) continue;
    f += fp[b];
    t += total[b];
  }
  return t == 0 ? 0.0 : static_cast<double>(f) / static_cast<double>(t);
}

void FPHistogram::accumulate(const FPHistogram& other) {
  if (other.edges != edges) throw ValidationError("cannot accumulate histograms with different bins");
  for (std::size_t b = 0; b < bins(); ++b) {
    fp[b] += other.fp[b];
    total[b] += other.total[b];
  }
}

void validate_bin_edges(std::span<const double> edges) {
  if (edges.size() < 2) throw ValidationError("need at least two bin edges");
  if (edges.front() != 0.0 || edges.back() != 1.0) throw ValidationError("bin edges must start at 0 and end at 1");
  for (std::size_t i = 1; i < edges.size(); ++i) {
    if (!(edges[i] > edges[i - 1])) throw ValidationError("bin edges must be strictly increasing");
  }
}

std::size_t confidence_bin(std::span<const double> edges, double score) {
  const auto it = std::lower_bound(edges.begin() + 1, edges.end() - 1, score);
  return static_cast<std::size_t>(it - (edges.begin() + 1));
}

FPHistogram fp_by_confidence(std::span<const LabelSet> dets, std::span<const LabelSet> gts,
                             std::span<const double> bin_edges) {
  validate_bin_edges(bin_edges);
  FPHistogram h;
  h.edges.assign(bin_edges.begin(), bin_edges.end());
  h.fp.assign(bin_edges.size() - 1, 0);
  h.total.assign(bin_edges.size() - 1, 0);
  for (const auto& d : collect(dets, gts, 0.5).dets) {
    const auto b = confidence_bin(bin_edges, d.score);
    ++h.total[b];
    if (!d.tp) ++h.fp[b];
  }
  return h;
}

Proportion simple_proportion(std::span<const LossRecord> records, const LossWeights& weights, bool tp_only) {
  std::size_t counted = 0;
  std::size_t simple = 0;
  for (const auto& r : records) {
    if (tp_only && !r.is_true_positive) continue;
    ++counted;
    if (classify_simple(r, weights)) ++simple;
  }
  if (counted == 0) return {0.0, true};
  return {static_cast<double>(simple) / static_cast<double>(counted), false};
}

DetectionQuality detection_quality(std::span<const LabelSet> dets, std::span<const LabelSet> gts,
                                   double min_score) {
  std::vector<LabelSet> kept;
  kept.reserve(dets.size());
  for (const auto& s : dets) {
    LabelSet f{s.image_id, {}, s.kind};
    for (const auto& d : s.detections) {
      if (min_score <= 0.0 || d.score > min_score) f.detections.push_back(d);
    }
    kept.push_back(std::move(f));
  }
  const auto c = collect(kept, gts, 0.5);
  DetectionQuality q;
  for (const auto& [cls, n] : c.gt_per_class) q.gt += n;
  for (const auto& d : c.dets) (d.tp ? q.tp : q.fp) += 1;
  if (q.tp + q.fp > 0) q.precision = static_cast<double>(q.tp) / static_cast<double>(q.tp + q.fp);
  if (q.gt > 0) q.recall = static_cast<double>(q.tp) / static_cast<double>(q.gt);
  if (q.precision + q.recall > 0.0) q.f1 = 2.0 * q.precision * q.recall / (q.precision + q.recall);
  return q;
}

}  // namespace desimpl
