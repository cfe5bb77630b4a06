#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "desimpl/core_types.hpp"
#include "desimpl/rng.hpp"

namespace desimpl {

/// Row-major image with channels interleaved; values in [0,1].
class ImageTensor {
 public:
  ImageTensor() = default;
  ImageTensor(int width, int height, int channels, double fill = 0.0);
  ImageTensor(int width, int height, int channels, std::vector<double> values);

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  std::size_t size() const { return values_.size(); }
  bool same_shape(const ImageTensor& o) const {
    return width_ == o.width_ && height_ == o.height_ && channels_ == o.channels_;
  }

  double& at(int x, int y, int c) { return values_[index(x, y, c)]; }
  double at(int x, int y, int c) const { return values_[index(x, y, c)]; }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  friend bool operator==(const ImageTensor&, const ImageTensor&) = default;

 private:
  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 1;
  std::vector<double> values_;
};

/// x' = clip(x + eps * sign(grad)) elementwise, sign(0) = 0.
/// Throws ValidationError on shape mismatch or negative eps.
ImageTensor fgsm_perturb(const ImageTensor& x, const ImageTensor& grad, double eps);

/// Logistic model s = <weights, x> + bias, used only as a gradient source.
struct ToyModelParams {
  std::vector<double> weights;  ///< one per pixel-channel, image layout
  double bias = 0.0;
  int target_label = 1;  ///< y in {0,1}
};

struct LossAndGradient {
  double loss = 0.0;
  ImageTensor gradient;
};

/// Binary cross-entropy of sigmoid(s) against target_label and its gradient
/// (sigmoid(s) - y) * weights with respect to the image.
LossAndGradient toy_model_loss_grad(const ImageTensor& x, const ToyModelParams& params);
double toy_model_loss(const ImageTensor& x, const ToyModelParams& params);

/// Random toy model with N(0, scale / sqrt(n)) weights.
ToyModelParams random_toy_model(const ImageTensor& shape_like, double scale, int target_label,
                                Rng rng);

enum class Domain { source, target };
std::string_view to_string(Domain d);
Domain parse_domain(std::string_view text);

struct LabeledImage {
  ImageTensor image;
  LabelSet labels;  ///< ground truth for source images, pseudo labels for target
};

struct MosaicConfig {
  int out_size = 64;
  /// Mosaic center is drawn uniformly from [center_min, center_max] on both
  /// axes; 0.5/0.5 gives an exact 2x2 grid.
  double center_min = 0.5;
  double center_max = 0.5;
  /// Boxes keeping less than this fraction of their transformed area after
  /// clipping to the quadrant are dropped.
  double min_area_ratio = 0.1;

  void validate() const;
};

struct MixedSample {
  ImageTensor image;
  LabelSet labels;                      ///< stable order, kind pseudo_label
  std::vector<LabelKind> label_origin;  ///< aligned with labels.detections
  std::array<Domain, 4> domain_mask{};  ///< TL, TR, BL, BR
  std::array<std::size_t, 4> picks{};   ///< index into the domain's pool
  double center_x = 0.5;
  double center_y = 0.5;
};

/// Quadrant 0..3 = TL, TR, BL, BR. A unit-square box of the placed image is
/// scaled by 0.5 and anchored at the mosaic center, then clipped to the
/// quadrant. Returns nullopt when the clipped area is below
/// min_area_ratio * transformed area (or the transformed box is degenerate).
std::optional<BBox> place_box_in_quadrant(const BBox& box, int quadrant, double center_x,
                                          double center_y, double min_area_ratio);

/// 2x2 DomainMix mosaic with at least one source and one target quadrant.
/// Throws ValidationError on an empty pool or mismatched channel counts.
MixedSample domain_mix(std::span<const LabeledImage> source, std::span<const LabeledImage> target,
                       Rng rng, const MosaicConfig& cfg);

}  // namespace desimpl
