#include "desimpl/box_fusion.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace desimpl {

double iou(const BBox& a, const BBox& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = box_area(a) + box_area(b) - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

LabelSet nms(const LabelSet& dets, double iou_threshold) {
  auto sorted = dets.detections;
  sort_detections(sorted);
  std::vector<Detection> kept;
  for (const auto& d : sorted) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return k.class_id == d.class_id && iou(k.bbox, d.bbox) > iou_threshold;
    });
    if (!suppressed) kept.push_back(d);
  }
  return LabelSet{dets.image_id, std::move(kept), dets.kind};
}

LabelSet soft_nms(const LabelSet& dets, double iou_threshold, double sigma, double score_floor) {
  if (!(sigma > 0.0)) throw ValidationError("soft-nms sigma must be positive");
  std::vector<Detection> pending = dets.detections;
  std::vector<Detection> kept;
  while (!pending.empty()) {
    auto best = std::min_element(pending.begin(), pending.end(), detection_before);
    const Detection top = *best;
    pending.erase(best);
    kept.push_back(top);
    std::vector<Detection> survivors;
    survivors.reserve(pending.size());
    for (auto d : pending) {
      if (d.class_id == top.class_id) {
        const double overlap = iou(top.bbox, d.bbox);
        if (overlap > iou_threshold) d.score *= std::exp(-(overlap * overlap) / sigma);
      }
      if (d.score >= score_floor) survivors.push_back(d);
    }
    pending = std::move(survivors);
  }
  sort_detections(kept);
  return LabelSet{dets.image_id, std::move(kept), dets.kind};
}

void FusionConfig::validate() const {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) {
    throw ValidationError(fmt::format("fusion iou_threshold {} outside (0,1]", iou_threshold));
  }
  if (source_count < 1) throw ValidationError("fusion source_count must be >= 1");
}

namespace {

Detection fuse_members(const std::vector<ClusterMember>& members) {
  double wsum = 0.0;
  double ssum = 0.0;
  for (const auto& m : members) {
    wsum += m.detection.score;
    ssum += m.detection.score;
  }
  const bool uniform = !(wsum > 0.0);
  if (uniform) wsum = static_cast<double>(members.size());
  BBox box{0, 0, 0, 0};
  for (const auto& m : members) {
    const double w = uniform ? 1.0 : m.detection.score;
    box.x1 += w * m.detection.bbox.x1;
    box.y1 += w * m.detection.bbox.y1;
    box.x2 += w * m.detection.bbox.x2;
    box.y2 += w * m.detection.bbox.y2;
  }
  box = {box.x1 / wsum, box.y1 / wsum, box.x2 / wsum, box.y2 / wsum};
  return Detection{clip_box(box), members.front().detection.class_id,
                   ssum / static_cast<double>(members.size())};
}

}  // namespace

std::vector<Cluster> wbf_clusters(std::span<const LabelSet> sources, const FusionConfig& cfg) {
  cfg.validate();
  for (const auto& s : sources) {
    if (s.image_id != sources.front().image_id) {
      throw ValidationError(fmt::format("wbf sources disagree on image_id ('{}' vs '{}')",
                                        sources.front().image_id, s.image_id));
    }
  }

  std::vector<ClusterMember> pooled;
  for (std::size_t s = 0; s < sources.size(); ++s) {
    for (std::size_t i = 0; i < sources[s].detections.size(); ++i) {
      pooled.push_back({sources[s].detections[i], s, i});
    }
  }
  std::stable_sort(pooled.begin(), pooled.end(), [](const ClusterMember& a, const ClusterMember& b) {
    return a.detection.score > b.detection.score;
  });

  std::vector<Cluster> clusters;
  for (const auto& m : pooled) {
    std::size_t best = clusters.size();
    double best_iou = cfg.iou_threshold;
    for (std::size_t c = 0; c < clusters.size(); ++c) {
      if (clusters[c].fused.class_id != m.detection.class_id) continue;
      const double overlap = iou(clusters[c].fused.bbox, m.detection.bbox);
      if (overlap > best_iou) {
        best_iou = overlap;
        best = c;
      }
    }
    if (best == clusters.size()) {
      clusters.push_back(Cluster{{m}, m.detection});
    } else {
      clusters[best].members.push_back(m);
      clusters[best].fused = fuse_members(clusters[best].members);
    }
  }

  if (cfg.rescale_confidence) {
    const double t = static_cast<double>(cfg.source_count);
    for (auto& c : clusters) {
      const double n = static_cast<double>(c.members.size());
      c.fused.score *= std::min(n, t) / t;
    }
  }
  return clusters;
}

LabelSet wbf(std::span<const LabelSet> sources, const FusionConfig& cfg) {
  LabelSet out;
  if (!sources.empty()) {
    out.image_id = sources.front().image_id;
    out.kind = sources.front().kind;
  }
  for (const auto& c : wbf_clusters(sources, cfg)) out.detections.push_back(c.fused);
  normalize(out);
  return out;
}

}  // namespace desimpl
