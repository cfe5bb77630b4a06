#pragma once

#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "desimpl/core_types.hpp"

namespace desimpl {

enum class BankStrategy { wbf, direct, mevc };
enum class EntryStatus { positive, ignore };

std::string_view to_string(BankStrategy s);
BankStrategy parse_bank_strategy(std::string_view text);
std::string_view to_string(EntryStatus s);
EntryStatus parse_entry_status(std::string_view text);

struct BankEntry {
  Detection detection;
  EntryStatus status = EntryStatus::positive;
  int age = 0;         ///< update rounds survived
  int fuse_count = 0;  ///< detections absorbed by fusion or pairing

  friend bool operator==(const BankEntry&, const BankEntry&) = default;
};

struct BankThresholds {
  double init_conf = 0.6;
  double fuse_conf = 0.05;
  double iou_match = 0.5;
  double mevc_positive = 0.6;
  double mevc_ignore = 0.3;
  double direct_conf = 0.4;

  void validate() const;
  friend bool operator==(const BankThresholds&, const BankThresholds&) = default;
};

/// Per-image pseudo-label store. Entries of each image are kept in stable
/// detection order. Images may map to an empty list.
struct MemoryBank {
  std::map<std::string, std::vector<BankEntry>> entries;
  int round = 0;
  BankStrategy strategy = BankStrategy::wbf;
  BankThresholds thresholds;
  /// Forwarded to the WBF update (min(n,2)/2 confidence rescale).
  bool rescale_confidence = false;

  std::size_t entry_count() const;
  friend bool operator==(const MemoryBank&, const MemoryBank&) = default;
};

/// What happened to one pre-update MEV-C entry.
struct MevcTransition {
  std::string image_id;
  Detection before;
  EntryStatus status_before = EntryStatus::positive;
  bool matched = false;
  bool removed = false;
  EntryStatus status_after = EntryStatus::positive;
};

/// Audit trail of one update call.
struct UpdateLog {
  std::vector<std::string> admitted_images;  ///< images first seen in this update
  std::vector<MevcTransition> transitions;   ///< MEV-C only
};

/// Keeps detections with score strictly above init_conf, all positive,
/// round 0. Throws ValidationError on duplicate image ids.
MemoryBank init_bank(std::span<const LabelSet> initial_preds, const BankThresholds& thresholds,
                     BankStrategy strategy);

/// Fuses each image's entries with its new predictions (score > fuse_conf)
/// by WBF at iou_match. Images without new predictions keep their entries.
MemoryBank update_wbf(MemoryBank bank, std::span<const LabelSet> new_preds,
                      UpdateLog* log = nullptr);

/// Replaces each image's entries by its predictions with score > direct_conf.
MemoryBank update_direct(MemoryBank bank, std::span<const LabelSet> new_preds,
                         UpdateLog* log = nullptr);

/// Triplet-bank update: status by score, one-to-one greedy same-class
/// matching (old entries by descending score, best new box by IoU strictly
/// above iou_match), higher score retained, unmatched old entries demoted one
/// level, unmatched new boxes inserted.
MemoryBank update_mevc(MemoryBank bank, std::span<const LabelSet> new_preds,
                       UpdateLog* log = nullptr);

/// Dispatches on bank.strategy.
MemoryBank update_bank(MemoryBank bank, std::span<const LabelSet> new_preds,
                       UpdateLog* log = nullptr);

/// Supervision export: one pseudo_label set per image (including empty ones),
/// sorted by image id. `min_score` > 0 additionally keeps only entries with
/// score strictly above it.
std::vector<LabelSet> bank_snapshot(const MemoryBank& bank, bool positive_only,
                                    double min_score = 0.0);

/// Bank persistence: a header line
///   {"round":..,"strategy":..,"thresholds":{..},"images":[..],"rescale_confidence":..}
/// followed by one entry per line
///   {"image_id":..,"class_id":..,"bbox":[..],"score":..,"status":..,"age":..,"fuse_count":..}
void save_bank(const MemoryBank& bank, std::ostream& out);
MemoryBank load_bank(std::istream& in);

}  // namespace desimpl
