#include "desimpl/adaptive_loss.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "desimpl/box_fusion.hpp"

namespace desimpl {

void validate_record(const LossRecord& r) {
  if (!std::isfinite(r.cls_loss) || r.cls_loss < 0.0 || !std::isfinite(r.loc_loss) ||
      r.loc_loss < 0.0) {
    throw ValidationError("loss record losses must be finite and non-negative");
  }
  if (!(r.confidence >= 0.0 && r.confidence <= 1.0)) {
    throw ValidationError("loss record confidence outside [0,1]");
  }
}

std::string_view to_string(SimpleLossMode m) {
  switch (m) {
    case SimpleLossMode::total:
      return "total";
    case SimpleLossMode::loc_only:
      return "loc_only";
    case SimpleLossMode::cls_only:
      return "cls_only";
  }
  return "total";
}

SimpleLossMode parse_simple_loss_mode(std::string_view text) {
  if (text == "total") return SimpleLossMode::total;
  if (text == "loc_only") return SimpleLossMode::loc_only;
  if (text == "cls_only") return SimpleLossMode::cls_only;
  throw ValidationError(fmt::format("unknown simple loss mode '{}'", text));
}

void LossWeights::validate() const {
  if (!(tau >= 0.0 && tau <= 1.0)) throw ValidationError("tau outside [0,1]");
  if (!(simple_threshold >= 0.0 && simple_threshold <= 1.0)) {
    throw ValidationError("simple_threshold outside [0,1]");
  }
}

double label_weight(double confidence, double tau) {
  if (!(confidence >= 0.0 && confidence <= 1.0)) {
    throw ValidationError(fmt::format("confidence {} outside [0,1]", confidence));
  }
  if (!(tau >= 0.0 && tau <= 1.0)) throw ValidationError(fmt::format("tau {} outside [0,1]", tau));
  return confidence > tau ? 1.0 : confidence;
}

double localization_weight(const LossRecord& r, const LossWeights& w) {
  return w.adaptive ? label_weight(r.confidence, w.tau) : 1.0;
}

double record_loss(const LossRecord& r, const LossWeights& w) {
  return r.cls_loss + localization_weight(r, w) * r.loc_loss;
}

void CompensatedSum::add(double v) {
  const double t = sum_ + v;
  if (std::abs(sum_) >= std::abs(v)) {
    carry_ += (sum_ - t) + v;
  } else {
    carry_ += (v - t) + sum_;
  }
  sum_ = t;
}

double total_loss(double source_loss, std::span<const LossRecord> records, const LossWeights& w) {
  CompensatedSum acc;
  acc.add(source_loss);
  for (const auto& r : records) {
    acc.add(r.cls_loss);
    acc.add(localization_weight(r, w) * r.loc_loss);
  }
  return acc.value();
}

double total_loss(double source_loss, std::span<const LossRecord> records, double tau) {
  LossWeights w;
  w.tau = tau;
  return total_loss(source_loss, records, w);
}

LossRecord surrogate_losses(const Detection& pred, const Detection& pseudo, double class_prob) {
  if (!(class_prob > 0.0 && class_prob <= 1.0)) {
    throw ValidationError(fmt::format("class_prob {} outside (0,1]", class_prob));
  }
  LossRecord r;
  r.loc_loss = 1.0 - iou(pred.bbox, pseudo.bbox);
  r.cls_loss = std::min(-std::log(class_prob), kMaxClsLoss);
  if (r.cls_loss < 0.0) r.cls_loss = 0.0;  // -log(1) is -0.0
  r.confidence = pseudo.score;
  return r;
}

LossRecord missed_losses(const Detection& pseudo, double class_prob) {
  if (!(class_prob > 0.0 && class_prob <= 1.0)) {
    throw ValidationError(fmt::format("class_prob {} outside (0,1]", class_prob));
  }
  LossRecord r;
  r.loc_loss = 1.0;
  r.cls_loss = std::max(0.0, std::min(-std::log(class_prob), kMaxClsLoss));
  r.confidence = pseudo.score;
  return r;
}

bool classify_simple(const LossRecord& r, const LossWeights& w) {
  double value = 0.0;
  switch (w.mode) {
    case SimpleLossMode::total:
      value = record_loss(r, w);
      break;
    case SimpleLossMode::loc_only:
      value = localization_weight(r, w) * r.loc_loss;
      break;
    case SimpleLossMode::cls_only:
      value = r.cls_loss;
      break;
  }
  return value <= w.simple_threshold;
}

}  // namespace desimpl
