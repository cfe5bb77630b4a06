#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>

#include "desimpl/core_types.hpp"

namespace desimpl {

/// Per-pseudo-label loss triple (plus bookkeeping) produced by the simulator.
struct LossRecord {
  std::string image_id;
  std::size_t label_index = 0;
  double cls_loss = 0.0;
  double loc_loss = 0.0;
  double confidence = 1.0;
  bool is_true_positive = false;
};

void validate_record(const LossRecord& r);

/// Which part of a record counts as its "loss value" for the simple-sample test.
enum class SimpleLossMode { total, loc_only, cls_only };

std::string_view to_string(SimpleLossMode m);
SimpleLossMode parse_simple_loss_mode(std::string_view text);

struct LossWeights {
  double tau = 0.3;
  double simple_threshold = 0.3;
  SimpleLossMode mode = SimpleLossMode::total;
  /// When false the localization weight is 1 for every label (plain loss).
  bool adaptive = true;

  void validate() const;
};

/// 1 when c > tau, otherwise c. Throws ValidationError outside [0,1].
double label_weight(double confidence, double tau);

/// Localization weight under `w` (1 when adaptive weighting is off).
double localization_weight(const LossRecord& r, const LossWeights& w);

/// cls + weight * loc for one record.
double record_loss(const LossRecord& r, const LossWeights& w);

/// source_loss + sum(cls_i) + sum(label_weight(c_i, tau) * loc_i), with
/// compensated summation so the result does not depend on record order beyond
/// rounding of the last bit.
double total_loss(double source_loss, std::span<const LossRecord> records, double tau);

/// Same composition with LossWeights (honours LossWeights::adaptive).
double total_loss(double source_loss, std::span<const LossRecord> records, const LossWeights& w);

/// Upper clip for the classification surrogate.
inline constexpr double kMaxClsLoss = 10.0;

/// loc = 1 - IoU(pred, pseudo); cls = min(-ln(class_prob), 10);
/// confidence = pseudo.score. class_prob must lie in (0,1].
LossRecord surrogate_losses(const Detection& pred, const Detection& pseudo, double class_prob);

/// Record for a pseudo label the model produced no box for: loc = 1.
LossRecord missed_losses(const Detection& pseudo, double class_prob);

/// True iff the selected loss value is <= simple_threshold.
bool classify_simple(const LossRecord& r, const LossWeights& w);

/// Neumaier-compensated accumulator.
class CompensatedSum {
 public:
  void add(double v);
  double value() const { return sum_ + carry_; }

 private:
  double sum_ = 0.0;
  double carry_ = 0.0;
};

}  // namespace desimpl
