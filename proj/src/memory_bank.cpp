#include "desimpl/memory_bank.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "desimpl/box_fusion.hpp"

namespace desimpl {

std::string_view to_string(BankStrategy s) {
  switch (s) {
    case BankStrategy::wbf:
      return "wbf";
    case BankStrategy::direct:
      return "direct";
    case BankStrategy::mevc:
      return "mevc";
  }
  return "wbf";
}

BankStrategy parse_bank_strategy(std::string_view text) {
  if (text == "wbf") return BankStrategy::wbf;
  if (text == "direct") return BankStrategy::direct;
  if (text == "mevc") return BankStrategy::mevc;
  throw ValidationError(fmt::format("unknown bank strategy '{}' (expected wbf, direct or mevc)", text));
}

std::string_view to_string(EntryStatus s) {
  return s == EntryStatus::positive ? "positive" : "ignore";
}

EntryStatus parse_entry_status(std::string_view text) {
  if (text == "positive") return EntryStatus::positive;
  if (text == "ignore") return EntryStatus::ignore;
  throw ValidationError(fmt::format("unknown entry status '{}'", text));
}

void BankThresholds::validate() const {
  const std::pair<const char*, double> fields[] = {
      {"init_conf", init_conf},         {"fuse_conf", fuse_conf},
      {"iou_match", iou_match},         {"mevc_positive", mevc_positive},
      {"mevc_ignore", mevc_ignore},     {"direct_conf", direct_conf}};
  for (const auto& [name, v] : fields) {
    if (!(v >= 0.0 && v <= 1.0)) throw ValidationError(fmt::format("threshold {}={} outside [0,1]", name, v));
  }
  if (mevc_ignore > mevc_positive) throw ValidationError("mevc_ignore must not exceed mevc_positive");
  if (!(iou_match > 0.0)) throw ValidationError("iou_match must be positive");
}

std::size_t MemoryBank::entry_count() const {
  std::size_t n = 0;
  for (const auto& [id, list] : entries) n += list.size();
  return n;
}

namespace {

void sort_entries(std::vector<BankEntry>& list) {
  std::stable_sort(list.begin(), list.end(), [](const BankEntry& a, const BankEntry& b) {
    return detection_before(a.detection, b.detection);
  });
}

std::map<std::string, const LabelSet*> index_by_image(std::span<const LabelSet> sets) {
  std::map<std::string, const LabelSet*> out;
  for (const auto& s : sets) {
    if (!out.emplace(s.image_id, &s).second) {
      throw ValidationError(fmt::format("duplicate image_id '{}'", s.image_id));
    }
    for (const auto& d : s.detections) validate_detection(d);
  }
  return out;
}

std::vector<Detection> filter_above(const LabelSet& set, double threshold) {
  std::vector<Detection> out;
  for (const auto& d : set.detections) {
    if (d.score > threshold) out.push_back(d);
  }
  sort_detections(out);
  return out;
}

void expect_strategy(const MemoryBank& bank, BankStrategy s) {
  if (bank.strategy != s) {
    throw ValidationError(fmt::format("bank strategy is {}, update requested {}",
                                      to_string(bank.strategy), to_string(s)));
  }
}

void age_untouched(MemoryBank& bank, const std::map<std::string, const LabelSet*>& preds) {
  for (auto& [id, list] : bank.entries) {
    if (preds.contains(id)) continue;
    for (auto& e : list) ++e.age;
  }
}

std::vector<BankEntry> fresh_entries(std::vector<Detection> dets) {
  std::vector<BankEntry> out;
  out.reserve(dets.size());
  for (auto& d : dets) out.push_back(BankEntry{d, EntryStatus::positive, 0, 0});
  return out;
}

}  // namespace

MemoryBank init_bank(std::span<const LabelSet> initial_preds, const BankThresholds& thresholds,
                     BankStrategy strategy) {
  thresholds.validate();
  MemoryBank bank;
  bank.strategy = strategy;
  bank.thresholds = thresholds;
  for (const auto& [id, set] : index_by_image(initial_preds)) {
    bank.entries[id] = fresh_entries(filter_above(*set, thresholds.init_conf));
  }
  return bank;
}

MemoryBank update_wbf(MemoryBank bank, std::span<const LabelSet> new_preds, UpdateLog* log) {
  expect_strategy(bank, BankStrategy::wbf);
  const auto preds = index_by_image(new_preds);
  age_untouched(bank, preds);

  FusionConfig cfg;
  cfg.iou_threshold = bank.thresholds.iou_match;
  cfg.rescale_confidence = bank.rescale_confidence;
  cfg.source_count = 2;

  for (const auto& [id, set] : preds) {
    auto fresh = filter_above(*set, bank.thresholds.fuse_conf);
    auto it = bank.entries.find(id);
    if (it == bank.entries.end()) {
      if (log) log->admitted_images.push_back(id);
      bank.entries[id] = fresh_entries(std::move(fresh));
      continue;
    }
    const auto& old = it->second;
    LabelSet sources[2];
    sources[0].image_id = sources[1].image_id = id;
    sources[0].kind = LabelKind::pseudo_label;
    for (const auto& e : old) sources[0].detections.push_back(e.detection);
    sources[1].detections = std::move(fresh);

    std::vector<BankEntry> next;
    for (const auto& cluster : wbf_clusters(sources, cfg)) {
      BankEntry entry{cluster.fused, EntryStatus::positive, 0, 0};
      bool has_bank_member = false;
      int fused_in = 0;
      for (const auto& m : cluster.members) {
        if (m.source == 0) {
          const auto& prev = old[m.index];
          entry.age = std::max(entry.age, prev.age + 1);
          fused_in += prev.fuse_count;
          has_bank_member = true;
        }
      }
      entry.fuse_count = fused_in + static_cast<int>(cluster.members.size()) - 1;
      if (!has_bank_member) entry.age = 0;
      next.push_back(entry);
    }
    sort_entries(next);
    it->second = std::move(next);
  }
  ++bank.round;
  return bank;
}

MemoryBank update_direct(MemoryBank bank, std::span<const LabelSet> new_preds, UpdateLog* log) {
  expect_strategy(bank, BankStrategy::direct);
  const auto preds = index_by_image(new_preds);
  age_untouched(bank, preds);
  for (const auto& [id, set] : preds) {
    if (log && !bank.entries.contains(id)) log->admitted_images.push_back(id);
    bank.entries[id] = fresh_entries(filter_above(*set, bank.thresholds.direct_conf));
  }
  ++bank.round;
  return bank;
}

MemoryBank update_mevc(MemoryBank bank, std::span<const LabelSet> new_preds, UpdateLog* log) {
  expect_strategy(bank, BankStrategy::mevc);
  const auto& th = bank.thresholds;
  const auto preds = index_by_image(new_preds);
  age_untouched(bank, preds);

  auto status_for = [&](double score) {
    return score >= th.mevc_positive ? EntryStatus::positive : EntryStatus::ignore;
  };

  for (const auto& [id, set] : preds) {
    std::vector<BankEntry> incoming;
    for (const auto& d : set->detections) {
      if (d.score >= th.mevc_ignore) incoming.push_back(BankEntry{d, status_for(d.score), 0, 0});
    }
    std::stable_sort(incoming.begin(), incoming.end(), [](const BankEntry& a, const BankEntry& b) {
      return detection_before(a.detection, b.detection);
    });

    auto it = bank.entries.find(id);
    if (it == bank.entries.end()) {
      if (log) log->admitted_images.push_back(id);
      bank.entries[id] = std::move(incoming);
      continue;
    }
    auto old = it->second;
    sort_entries(old);

    std::vector<bool> taken(incoming.size(), false);
    std::vector<BankEntry> next;
    for (const auto& prev : old) {
      std::size_t best = incoming.size();
      double best_iou = th.iou_match;
      for (std::size_t j = 0; j < incoming.size(); ++j) {
        if (taken[j] || incoming[j].detection.class_id != prev.detection.class_id) continue;
        const double overlap = iou(prev.detection.bbox, incoming[j].detection.bbox);
        if (overlap > best_iou) {
          best_iou = overlap;
          best = j;
        }
      }
      MevcTransition tr{id, prev.detection, prev.status, false, false, prev.status};
      if (best != incoming.size()) {
        taken[best] = true;
        const auto& cand = incoming[best];
        BankEntry kept = prev;
        if (cand.detection.score > prev.detection.score) kept.detection = cand.detection;
        kept.status = status_for(kept.detection.score);
        kept.age = prev.age + 1;
        kept.fuse_count = prev.fuse_count + 1;
        next.push_back(kept);
        tr.matched = true;
        tr.status_after = kept.status;
      } else if (prev.status == EntryStatus::positive) {
        BankEntry demoted = prev;
        demoted.status = EntryStatus::ignore;
        ++demoted.age;
        next.push_back(demoted);
        tr.status_after = EntryStatus::ignore;
      } else {
        tr.removed = true;
      }
      if (log) log->transitions.push_back(tr);
    }
    for (std::size_t j = 0; j < incoming.size(); ++j) {
      if (!taken[j]) next.push_back(incoming[j]);
    }
    sort_entries(next);
    it->second = std::move(next);
  }
  ++bank.round;
  return bank;
}

MemoryBank update_bank(MemoryBank bank, std::span<const LabelSet> new_preds, UpdateLog* log) {
  switch (bank.strategy) {
    case BankStrategy::wbf:
      return update_wbf(std::move(bank), new_preds, log);
    case BankStrategy::direct:
      return update_direct(std::move(bank), new_preds, log);
    case BankStrategy::mevc:
      return update_mevc(std::move(bank), new_preds, log);
  }
  return bank;
}

std::vector<LabelSet> bank_snapshot(const MemoryBank& bank, bool positive_only, double min_score) {
  std::vector<LabelSet> out;
  out.reserve(bank.entries.size());
  for (const auto& [id, list] : bank.entries) {
    LabelSet set{id, {}, LabelKind::pseudo_label};
    for (const auto& e : list) {
      if (positive_only && e.status != EntryStatus::positive) continue;
      if (min_score > 0.0 && !(e.detection.score > min_score)) continue;
      set.detections.push_back(e.detection);
    }
    normalize(set);
    out.push_back(std::move(set));
  }
  return out;
}

namespace {

using nlohmann::json;

json thresholds_to_json(const BankThresholds& t) {
  return json{{"init_conf", t.init_conf},         {"fuse_conf", t.fuse_conf},
              {"iou_match", t.iou_match},         {"mevc_positive", t.mevc_positive},
              {"mevc_ignore", t.mevc_ignore},     {"direct_conf", t.direct_conf}};
}

BankThresholds thresholds_from_json(const json& j) {
  BankThresholds t;
  auto read = [&](const char* key, double& field) {
    if (auto it = j.find(key); it != j.end()) {
      if (!it->is_number()) throw ValidationError(fmt::format("threshold {} must be a number", key));
      field = it->get<double>();
    }
  };
  read("init_conf", t.init_conf);
  read("fuse_conf", t.fuse_conf);
  read("iou_match", t.iou_match);
  read("mevc_positive", t.mevc_positive);
  read("mevc_ignore", t.mevc_ignore);
  read("direct_conf", t.direct_conf);
  t.validate();
  return t;
}

template <typename T>
T field(const json& obj, const char* key, std::size_t line) {
  const auto it = obj.find(key);
  if (it == obj.end()) throw ValidationError(fmt::format("line {}: missing \"{}\"", line, key));
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw ValidationError(fmt::format("line {}: \"{}\" has the wrong type", line, key));
  }
}

}  // namespace

void save_bank(const MemoryBank& bank, std::ostream& out) {
  json header{{"round", bank.round},
              {"strategy", std::string(to_string(bank.strategy))},
              {"thresholds", thresholds_to_json(bank.thresholds)},
              {"rescale_confidence", bank.rescale_confidence}};
  json images = json::array();
  for (const auto& [id, list] : bank.entries) images.push_back(id);
  header["images"] = std::move(images);
  out << header.dump() << '\n';
  for (const auto& [id, list] : bank.entries) {
    for (const auto& e : list) {
      const auto& b = e.detection.bbox;
      json line{{"image_id", id},
                {"class_id", e.detection.class_id},
                {"bbox", {b.x1, b.y1, b.x2, b.y2}},
                {"score", e.detection.score},
                {"status", std::string(to_string(e.status))},
                {"age", e.age},
                {"fuse_count", e.fuse_count}};
      out << line.dump() << '\n';
    }
  }
}

MemoryBank load_bank(std::istream& in) {
  MemoryBank bank;
  std::string text;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, text)) {
    ++line_no;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ValidationError(fmt::format("line {}: malformed JSON ({})", line_no, e.what()));
    }
    if (!have_header) {
      bank.round = field<int>(obj, "round", line_no);
      bank.strategy = parse_bank_strategy(field<std::string>(obj, "strategy", line_no));
      if (auto it = obj.find("thresholds"); it != obj.end()) bank.thresholds = thresholds_from_json(*it);
      bank.rescale_confidence = obj.value("rescale_confidence", false);
      if (auto it = obj.find("images"); it != obj.end() && it->is_array()) {
        for (const auto& id : *it) bank.entries[id.get<std::string>()];
      }
      if (bank.round < 0) throw ValidationError("line 1: round must be non-negative");
      have_header = true;
      continue;
    }
    BankEntry e;
    const auto id = field<std::string>(obj, "image_id", line_no);
    e.detection.class_id = field<int>(obj, "class_id", line_no);
    const auto box = field<std::vector<double>>(obj, "bbox", line_no);
    if (box.size() != 4) throw ValidationError(fmt::format("line {}: bbox needs 4 numbers", line_no));
    e.detection.bbox = {box[0], box[1], box[2], box[3]};
    e.detection.score = field<double>(obj, "score", line_no);
    e.status = parse_entry_status(field<std::string>(obj, "status", line_no));
    e.age = obj.value("age", 0);
    e.fuse_count = obj.value("fuse_count", 0);
    try {
      e.detection.bbox = clip_box(e.detection.bbox);
      validate_detection(e.detection);
    } catch (const ValidationError& err) {
      throw ValidationError(fmt::format("line {}: {}", line_no, err.what()));
    }
    bank.entries[id].push_back(e);
  }
  if (!have_header) throw ValidationError("bank file has no header line");
  for (auto& [id, list] : bank.entries) sort_entries(list);
  return bank;
}

}  // namespace desimpl
