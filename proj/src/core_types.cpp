#include "desimpl/core_types.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include <fmt/format.h>

namespace desimpl {

BBox clip_box(const BBox& b) {
  if (!std::isfinite(b.x1) || !std::isfinite(b.y1) || !std::isfinite(b.x2) ||
      !std::isfinite(b.y2)) {
    throw ValidationError("box coordinates must be finite");
  }
  auto clamp01 = [](double v) { return std::clamp(v, 0.0, 1.0); };
  BBox out{clamp01(b.x1), clamp01(b.y1), clamp01(b.x2), clamp01(b.y2)};
  if (out.x1 > out.x2) std::swap(out.x1, out.x2);
  if (out.y1 > out.y2) std::swap(out.y1, out.y2);
  return out;
}

double box_area(const BBox& b) {
  return std::max(0.0, b.x2 - b.x1) * std::max(0.0, b.y2 - b.y1);
}

BBox box_from_center(double cx, double cy, double w, double h) {
  return clip_box({cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h});
}

BBox box_from_pixels(double x1, double y1, double x2, double y2, double image_width,
                     double image_height) {
  if (!(image_width > 0.0) || !(image_height > 0.0)) {
    throw ValidationError("image dimensions must be positive");
  }
  return clip_box({x1 / image_width, y1 / image_height, x2 / image_width, y2 / image_height});
}

void validate_detection(const Detection& d, std::optional<int> class_count) {
  if (!std::isfinite(d.score) || d.score < 0.0 || d.score > 1.0) {
    throw ValidationError(fmt::format("score {} outside [0,1]", d.score));
  }
  if (d.class_id < 0) throw ValidationError("class_id must be non-negative");
  if (class_count && d.class_id >= *class_count) {
    throw ValidationError(
        fmt::format("class_id {} not below class count {}", d.class_id, *class_count));
  }
  if (clip_box(d.bbox) != d.bbox) {
    throw ValidationError("box must be ordered and inside [0,1]");
  }
}

std::string_view to_string(LabelKind kind) {
  switch (kind) {
    case LabelKind::ground_truth:
      return "ground_truth";
    case LabelKind::prediction:
      return "prediction";
    case LabelKind::pseudo_label:
      return "pseudo_label";
  }
  return "prediction";
}

LabelKind parse_label_kind(std::string_view text) {
  if (text == "ground_truth") return LabelKind::ground_truth;
  if (text == "prediction") return LabelKind::prediction;
  if (text == "pseudo_label") return LabelKind::pseudo_label;
  throw ValidationError(fmt::format("unknown label kind '{}'", text));
}

bool detection_before(const Detection& a, const Detection& b) {
  if (a.score != b.score) return a.score > b.score;
  return std::tie(a.class_id, a.bbox.x1, a.bbox.y1, a.bbox.x2, a.bbox.y2) <
         std::tie(b.class_id, b.bbox.x1, b.bbox.y1, b.bbox.x2, b.bbox.y2);
}

void sort_detections(std::vector<Detection>& dets) {
  std::stable_sort(dets.begin(), dets.end(), detection_before);
}

void normalize(LabelSet& set) {
  if (set.kind == LabelKind::ground_truth) {
    for (auto& d : set.detections) d.score = 1.0;
  }
  sort_detections(set.detections);
}

LabelSet make_label_set(std::string image_id, std::vector<Detection> dets, LabelKind kind) {
  LabelSet set{std::move(image_id), std::move(dets), kind};
  normalize(set);
  return set;
}

}  // namespace desimpl
