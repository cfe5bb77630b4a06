#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace desimpl {

/// Raised when an input violates a documented precondition or file schema.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a file cannot be opened, read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Axis-aligned box in normalized image coordinates, corner convention.
///
/// The aggregate does not enforce ordering on its own; every value that
/// crosses a module boundary goes through clip_box(), which restores
/// x1 <= x2, y1 <= y2 and clamps to [0,1]. Zero-area boxes are legal.
struct BBox {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double center_x() const { return 0.5 * (x1 + x2); }
  double center_y() const { return 0.5 * (y1 + y2); }

  friend bool operator==(const BBox&, const BBox&) = default;
};

/// Clamps to [0,1] and swaps corners if needed. Throws ValidationError on
/// non-finite input.
BBox clip_box(const BBox& b);

/// (x2-x1)*(y2-y1), never negative.
double box_area(const BBox& b);

/// Center/size ingest: (cx, cy, w, h) normalized -> clipped corner box.
BBox box_from_center(double cx, double cy, double w, double h);

/// Pixel corner box on a width x height image -> normalized, clipped.
BBox box_from_pixels(double x1, double y1, double x2, double y2, double image_width,
                     double image_height);

struct Detection {
  BBox bbox;
  int class_id = 0;
  double score = 1.0;

  friend bool operator==(const Detection&, const Detection&) = default;
};

/// Checks score in [0,1], class_id >= 0 (and < class_count when given) and a
/// finite, ordered, in-range box.
void validate_detection(const Detection& d, std::optional<int> class_count = std::nullopt);

enum class LabelKind { ground_truth, prediction, pseudo_label };

std::string_view to_string(LabelKind kind);
LabelKind parse_label_kind(std::string_view text);

/// Stable detection order: descending score, then (class_id, x1, y1, x2, y2)
/// ascending.
bool detection_before(const Detection& a, const Detection& b);
void sort_detections(std::vector<Detection>& dets);

struct LabelSet {
  std::string image_id;
  std::vector<Detection> detections;
  LabelKind kind = LabelKind::prediction;

  bool empty() const { return detections.empty(); }
  std::size_t size() const { return detections.size(); }

  friend bool operator==(const LabelSet&, const LabelSet&) = default;
};

/// Builds a LabelSet that satisfies the ordering invariant. Ground-truth sets
/// have every score forced to 1.0.
LabelSet make_label_set(std::string image_id, std::vector<Detection> dets, LabelKind kind);

/// Re-establishes the ordering (and ground-truth score) invariant in place.
void normalize(LabelSet& set);

struct Seed {
  std::uint64_t value = 0;
  friend bool operator==(const Seed&, const Seed&) = default;
};

}  // namespace desimpl
