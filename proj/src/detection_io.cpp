#include "desimpl/detection_io.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace desimpl {

namespace {

using nlohmann::json;

double number_at(const json& obj, const char* key, std::size_t line) {
  const auto it = obj.find(key);
  if (it == obj.end() || !it->is_number()) {
    throw ValidationError(fmt::format("line {}: missing or non-numeric \"{}\"", line, key));
  }
  return it->get<double>();
}

}  // namespace

std::vector<LabelSet> parse_detections(std::istream& in, LabelKind kind,
                                       std::optional<int> class_count) {
  std::map<std::string, std::vector<Detection>> grouped;
  std::string text;
  std::size_t line_no = 0;
  while (std::getline(in, text)) {
    ++line_no;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ValidationError(fmt::format("line {}: malformed JSON ({})", line_no, e.what()));
    }
    if (!obj.is_object()) throw ValidationError(fmt::format("line {}: expected an object", line_no));

    const auto id = obj.find("image_id");
    if (id == obj.end() || !id->is_string()) {
      throw ValidationError(fmt::format("line {}: missing string \"image_id\"", line_no));
    }
    const auto cls = obj.find("class_id");
    if (cls == obj.end() || !cls->is_number_integer()) {
      throw ValidationError(fmt::format("line {}: missing integer \"class_id\"", line_no));
    }
    const auto box = obj.find("bbox");
    if (box == obj.end() || !box->is_array() || box->size() != 4 ||
        !std::all_of(box->begin(), box->end(), [](const json& v) { return v.is_number(); })) {
      throw ValidationError(fmt::format("line {}: \"bbox\" must be four numbers", line_no));
    }

    Detection d;
    d.class_id = cls->get<int>();
    d.bbox = {(*box)[0].get<double>(), (*box)[1].get<double>(), (*box)[2].get<double>(),
              (*box)[3].get<double>()};
    if (kind == LabelKind::ground_truth) {
      d.score = 1.0;
    } else {
      d.score = number_at(obj, "score", line_no);
    }
    try {
      d.bbox = clip_box(d.bbox);
      validate_detection(d, class_count);
    } catch (const ValidationError& e) {
      throw ValidationError(fmt::format("line {}: {}", line_no, e.what()));
    }
    grouped[id->get<std::string>()].push_back(d);
  }
  if (in.bad()) throw IoError("read failure");

  std::vector<LabelSet> out;
  out.reserve(grouped.size());
  for (auto& [image_id, dets] : grouped) {
    out.push_back(make_label_set(image_id, std::move(dets), kind));
  }
  return out;
}

std::vector<LabelSet> read_detections(const std::filesystem::path& path, LabelKind kind,
                                      std::optional<int> class_count) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
  try {
    return parse_detections(in, kind, class_count);
  } catch (const ValidationError& e) {
    throw ValidationError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

std::string format_double(double v) { return fmt::format("{}", v); }

void write_detections(std::ostream& out, const std::vector<LabelSet>& sets) {
  std::vector<const LabelSet*> order;
  order.reserve(sets.size());
  for (const auto& s : sets) order.push_back(&s);
  std::stable_sort(order.begin(), order.end(),
                   [](const LabelSet* a, const LabelSet* b) { return a->image_id < b->image_id; });
  for (const LabelSet* set : order) {
    auto dets = set->detections;
    sort_detections(dets);
    for (const auto& d : dets) {
      json obj = json::object();
      obj["image_id"] = set->image_id;
      obj["class_id"] = d.class_id;
      obj["bbox"] = {d.bbox.x1, d.bbox.y1, d.bbox.x2, d.bbox.y2};
      if (set->kind != LabelKind::ground_truth) obj["score"] = d.score;
      out << obj.dump() << '\n';
    }
  }
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError(fmt::format("cannot create {}: {}", path.parent_path().string(), ec.message()));
  }
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(fmt::format("cannot write {}", tmp.string()));
    out << contents;
    out.flush();
    if (!out) throw IoError(fmt::format("write failed for {}", tmp.string()));
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError(fmt::format("cannot rename {} -> {}: {}", tmp.string(), path.string(), ec.message()));
}

void write_detections_file(const std::filesystem::path& path, const std::vector<LabelSet>& sets) {
  std::ostringstream buf;
  write_detections(buf, sets);
  write_file_atomic(path, buf.str());
}

}  // namespace desimpl
