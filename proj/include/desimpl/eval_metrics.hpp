#pragma once

#include <optional>
#include <span>
#include <vector>

#include "desimpl/adaptive_loss.hpp"
#include "desimpl/core_types.hpp"

namespace desimpl {

struct MatchResult {
  /// Aligned with the detections in stable (score-descending) order.
  std::vector<Detection> detections;
  std::vector<bool> is_tp;
  std::vector<std::optional<std::size_t>> matched_gt;
  std::vector<bool> gt_matched;
  double iou_threshold = 0.5;

  std::size_t tp_count() const;
};

/// Detections are visited by descending score; each claims the unclaimed
/// same-class ground-truth box of largest IoU if that IoU >= iou_thr
/// (ties go to the lower GT index), otherwise it is a false positive.
/// Throws ValidationError when image ids differ.
MatchResult match_tp_fp(const LabelSet& dets, const LabelSet& gt, double iou_thr);

struct PRCurve {
  /// One point per distinct score, descending. Tied scores form one point.
  std::vector<double> thresholds;
  std::vector<double> precision;
  std::vector<double> recall;
  std::size_t gt_count = 0;
  std::size_t detection_count = 0;
  /// Area under the precision envelope over recall; nullopt when the class
  /// has neither ground truth nor detections.
  std::optional<double> ap;
};

/// All-point interpolated AP for one class. Detection sets are paired with
/// ground-truth sets by image_id; an image missing from `gts` has no ground
/// truth.
PRCurve average_precision(std::span<const LabelSet> dets, std::span<const LabelSet> gts,
                          int class_id, double iou_thr = 0.5);

struct MapResult {
  double map = 0.0;
  std::vector<std::optional<double>> per_class;  ///< index = class id
};

/// Mean of the defined per-class APs at IoU 0.5 over classes [0, class_count).
/// Throws ValidationError when no class has a defined AP.
MapResult map50(std::span<const LabelSet> dets, std::span<const LabelSet> gts, int class_count);

struct FPHistogram {
  std::vector<double> edges;
  std::vector<std::size_t> fp;
  std::vector<std::size_t> total;

  std::size_t bins() const { return fp.size(); }
  double rate(std::size_t bin) const;
  bool empty_bin(std::size_t bin) const { return total[bin] == 0; }
  /// Aggregated FP rate over bins lying entirely at or below `threshold`
  /// (below = true) or at or above it (below = false); 0 when empty.
  double aggregate_rate(double threshold, bool below) const;
  void accumulate(const FPHistogram& other);
};

/// Bin i covers (edges[i], edges[i+1]]; the first bin also includes edges[0].
std::size_t confidence_bin(std::span<const double> edges, double score);

/// Validates edges: at least two, strictly increasing, first 0 and last 1.
void validate_bin_edges(std::span<const double> edges);

/// Per-bin FP counts at IoU 0.5.
FPHistogram fp_by_confidence(std::span<const LabelSet> dets, std::span<const LabelSet> gts,
                             std::span<const double> bin_edges);

struct Proportion {
  double value = 0.0;
  bool empty = true;
};

/// Fraction of (optionally TP-only) records classified simple.
Proportion simple_proportion(std::span<const LossRecord> records, const LossWeights& weights,
                             bool tp_only);

/// Precision / recall / F1 at IoU 0.5 over all detections of all classes.
struct DetectionQuality {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t gt = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

DetectionQuality detection_quality(std::span<const LabelSet> dets, std::span<const LabelSet> gts,
                                   double min_score = 0.0);

}  // namespace desimpl
