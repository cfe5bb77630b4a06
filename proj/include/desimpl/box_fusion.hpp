#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "desimpl/core_types.hpp"

namespace desimpl {

/// Intersection over union; 0 when the union is empty.
double iou(const BBox& a, const BBox& b);

/// Greedy per-class NMS. A detection is suppressed when its IoU with an
/// already kept same-class detection is strictly above `iou_threshold`.
LabelSet nms(const LabelSet& dets, double iou_threshold);

/// Gaussian Soft-NMS. Each time the highest remaining detection is kept, the
/// scores of remaining same-class detections with IoU above `iou_threshold`
/// are multiplied by exp(-IoU^2 / sigma); detections whose score falls below
/// `score_floor` are dropped. Pass iou_threshold = 0 for the pure Gaussian
/// variant.
LabelSet soft_nms(const LabelSet& dets, double iou_threshold, double sigma, double score_floor);

struct FusionConfig {
  double iou_threshold = 0.5;
  bool rescale_confidence = false;
  /// Number of sources T used by the min(n, T) / T rescale.
  int source_count = 1;

  void validate() const;
};

struct ClusterMember {
  Detection detection;
  std::size_t source = 0;
  std::size_t index = 0;  ///< position inside its source LabelSet
};

struct Cluster {
  std::vector<ClusterMember> members;
  /// Score-weighted mean box, arithmetic-mean score (times the rescale factor
  /// when FusionConfig::rescale_confidence is set).
  Detection fused;
};

/// Weighted box fusion, exposing the clusters in founding order.
///
/// Detections from every source are pooled and visited by descending score
/// (stable with respect to source, then position). A detection joins the
/// same-class cluster whose current fused box has the largest IoU with it,
/// provided that IoU is strictly above the threshold; ties go to the earlier
/// cluster. Otherwise it founds a new cluster. The fused box is recomputed
/// from all members after every insertion.
///
/// Throws ValidationError when sources disagree on image_id.
std::vector<Cluster> wbf_clusters(std::span<const LabelSet> sources, const FusionConfig& cfg);

/// Fused detections in stable order. The result takes the image_id and kind
/// of the first source.
LabelSet wbf(std::span<const LabelSet> sources, const FusionConfig& cfg);

}  // namespace desimpl
