#include "desimpl/adversarial_aug.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace desimpl {

ImageTensor::ImageTensor(int width, int height, int channels, double fill)
    : width_(width), height_(height), channels_(channels) {
  if (width <= 0 || height <= 0) throw ValidationError("image dimensions must be positive");
  if (channels != 1 && channels != 3) throw ValidationError("image must have 1 or 3 channels");
  values_.assign(static_cast<std::size_t>(width) * height * channels, fill);
}

ImageTensor::ImageTensor(int width, int height, int channels, std::vector<double> values)
    : ImageTensor(width, height, channels) {
  if (values.size() != values_.size()) {
    throw ValidationError(fmt::format("image expects {} values, got {}", values_.size(), values.size()));
  }
  values_ = std::move(values);
}

ImageTensor fgsm_perturb(const ImageTensor& x, const ImageTensor& grad, double eps) {
  if (!x.same_shape(grad)) throw ValidationError("gradient shape does not match image shape");
  if (!(eps >= 0.0) || !std::isfinite(eps)) throw ValidationError("epsilon must be finite and >= 0");
  ImageTensor out = x;
  auto dst = out.values();
  const auto g = grad.values();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    const double sign = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
    const double orig = dst[i];
    double moved = orig + eps * sign;
    // Rounding of the sum can overshoot eps by an ulp; step back toward orig.
    while (std::abs(moved - orig) > eps) moved = std::nextafter(moved, orig);
    dst[i] = std::clamp(moved, 0.0, 1.0);
  }
  return out;
}

namespace {

double logit(const ImageTensor& x, const ToyModelParams& p) {
  if (p.weights.size() != x.size()) {
    throw ValidationError(fmt::format("toy model has {} weights, image has {} values",
                                      p.weights.size(), x.size()));
  }
  if (p.target_label != 0 && p.target_label != 1) throw ValidationError("target_label must be 0 or 1");
  const auto v = x.values();
  double s = p.bias;
  for (std::size_t i = 0; i < v.size(); ++i) s += p.weights[i] * v[i];
  return s;
}

// Binary cross-entropy written as softplus(s) - y*s, stable for large |s|.
double bce_from_logit(double s, int y) {
  const double softplus = std::max(s, 0.0) + std::log1p(std::exp(-std::abs(s)));
  return softplus - static_cast<double>(y) * s;
}

double sigmoid(double s) {
  if (s >= 0.0) return 1.0 / (1.0 + std::exp(-s));
  const double e = std::exp(s);
  return e / (1.0 + e);
}

}  // namespace

double toy_model_loss(const ImageTensor& x, const ToyModelParams& params) {
  return bce_from_logit(logit(x, params), params.target_label);
}

LossAndGradient toy_model_loss_grad(const ImageTensor& x, const ToyModelParams& params) {
  const double s = logit(x, params);
  const double residual = sigmoid(s) - static_cast<double>(params.target_label);
  ImageTensor grad(x.width(), x.height(), x.channels());
  auto g = grad.values();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = residual * params.weights[i];
  return {bce_from_logit(s, params.target_label), std::move(grad)};
}

ToyModelParams random_toy_model(const ImageTensor& shape_like, double scale, int target_label,
                                Rng rng) {
  ToyModelParams p;
  const double sd = scale / std::sqrt(static_cast<double>(shape_like.size()));
  p.weights.resize(shape_like.size());
  for (auto& w : p.weights) w = rng.normal(0.0, sd);
  p.target_label = target_label;
  return p;
}

std::string_view to_string(Domain d) { return d == Domain::source ? "source" : "target"; }

Domain parse_domain(std::string_view text) {
  if (text == "source") return Domain::source;
  if (text == "target") return Domain::target;
  throw ValidationError(fmt::format("unknown domain '{}'", text));
}

void MosaicConfig::validate() const {
  if (out_size < 2) throw ValidationError("mosaic out_size must be at least 2");
  if (!(center_min > 0.0 && center_min <= center_max && center_max < 1.0)) {
    throw ValidationError("mosaic center range must satisfy 0 < min <= max < 1");
  }
  if (!(min_area_ratio >= 0.0 && min_area_ratio <= 1.0)) {
    throw ValidationError("mosaic min_area_ratio outside [0,1]");
  }
}

namespace {

struct Placement {
  double ox, oy;                  // origin of the half-size placed image
  double qx1, qy1, qx2, qy2;      // quadrant bounds
};

Placement placement(int quadrant, double cx, double cy) {
  const bool left = quadrant % 2 == 0;
  const bool top = quadrant < 2;
  Placement p{};
  p.ox = left ? cx - 0.5 : cx;
  p.oy = top ? cy - 0.5 : cy;
  p.qx1 = left ? 0.0 : cx;
  p.qx2 = left ? cx : 1.0;
  p.qy1 = top ? 0.0 : cy;
  p.qy2 = top ? cy : 1.0;
  return p;
}

}  // namespace

std::optional<BBox> place_box_in_quadrant(const BBox& box, int quadrant, double center_x,
                                          double center_y, double min_area_ratio) {
  if (quadrant < 0 || quadrant > 3) throw ValidationError("quadrant must be in 0..3");
  const Placement p = placement(quadrant, center_x, center_y);
  const BBox moved{p.ox + 0.5 * box.x1, p.oy + 0.5 * box.y1, p.ox + 0.5 * box.x2,
                   p.oy + 0.5 * box.y2};
  const double moved_area = box_area(moved);
  if (!(moved_area > 0.0)) return std::nullopt;
  const BBox clipped{std::max(moved.x1, p.qx1), std::max(moved.y1, p.qy1),
                     std::min(moved.x2, p.qx2), std::min(moved.y2, p.qy2)};
  if (clipped.x2 <= clipped.x1 || clipped.y2 <= clipped.y1) return std::nullopt;
  if (box_area(clipped) < min_area_ratio * moved_area) return std::nullopt;
  return clip_box(clipped);
}

MixedSample domain_mix(std::span<const LabeledImage> source, std::span<const LabeledImage> target,
                       Rng rng, const MosaicConfig& cfg) {
  cfg.validate();
  if (source.empty() || target.empty()) {
    throw ValidationError("domain_mix needs at least one source and one target sample");
  }
  const int channels = source.front().image.channels();
  for (auto pool : {source, target}) {
    for (const auto& s : pool) {
      if (s.image.channels() != channels) throw ValidationError("domain_mix inputs differ in channel count");
      if (s.image.size() == 0) throw ValidationError("domain_mix input image is empty");
    }
  }

  MixedSample out;
  out.center_x = rng.uniform(cfg.center_min, cfg.center_max);
  out.center_y = rng.uniform(cfg.center_min, cfg.center_max);

  const auto src_q = static_cast<int>(rng.uniform_int(0, 3));
  auto tgt_q = static_cast<int>(rng.uniform_int(0, 2));
  if (tgt_q >= src_q) ++tgt_q;
  for (int q = 0; q < 4; ++q) {
    if (q == src_q) {
      out.domain_mask[q] = Domain::source;
    } else if (q == tgt_q) {
      out.domain_mask[q] = Domain::target;
    } else {
      out.domain_mask[q] = rng.bernoulli(0.5) ? Domain::source : Domain::target;
    }
  }
  for (int q = 0; q < 4; ++q) {
    const auto pool_size = out.domain_mask[q] == Domain::source ? source.size() : target.size();
    out.picks[q] = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(pool_size) - 1));
  }
  auto sample_at = [&](int q) -> const LabeledImage& {
    return out.domain_mask[q] == Domain::source ? source[out.picks[q]] : target[out.picks[q]];
  };

  const int n = cfg.out_size;
  out.image = ImageTensor(n, n, channels, 0.5);
  for (int py = 0; py < n; ++py) {
    const double v = (py + 0.5) / n;
    for (int px = 0; px < n; ++px) {
      const double u = (px + 0.5) / n;
      const int q = (u >= out.center_x ? 1 : 0) + (v >= out.center_y ? 2 : 0);
      const Placement p = placement(q, out.center_x, out.center_y);
      const double su = (u - p.ox) / 0.5;
      const double sv = (v - p.oy) / 0.5;
      if (su < 0.0 || su >= 1.0 || sv < 0.0 || sv >= 1.0) continue;
      const ImageTensor& img = sample_at(q).image;
      const int sx = std::min(img.width() - 1, static_cast<int>(su * img.width()));
      const int sy = std::min(img.height() - 1, static_cast<int>(sv * img.height()));
      for (int c = 0; c < channels; ++c) out.image.at(px, py, c) = img.at(sx, sy, c);
    }
  }

  std::vector<std::pair<Detection, LabelKind>> labels;
  for (int q = 0; q < 4; ++q) {
    const LabelKind origin =
        out.domain_mask[q] == Domain::source ? LabelKind::ground_truth : LabelKind::pseudo_label;
    for (const auto& d : sample_at(q).labels.detections) {
      if (auto placed = place_box_in_quadrant(d.bbox, q, out.center_x, out.center_y, cfg.min_area_ratio)) {
        labels.push_back({Detection{*placed, d.class_id, d.score}, origin});
      }
    }
  }
  std::stable_sort(labels.begin(), labels.end(),
                   [](const auto& a, const auto& b) { return detection_before(a.first, b.first); });
  out.labels.image_id = "mosaic";
  out.labels.kind = LabelKind::pseudo_label;
  for (const auto& [d, origin] : labels) {
    out.labels.detections.push_back(d);
    out.label_origin.push_back(origin);
  }
  return out;
}

}  // namespace desimpl
