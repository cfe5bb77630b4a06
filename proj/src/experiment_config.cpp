#include "desimpl/experiment_config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <type_traits>

#include <fmt/format.h>

namespace desimpl {

namespace {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Field tables. One visit() per struct drives both reading and writing.

template <class V>
void visit(V& v, BankThresholds& t) {
  v("init_conf", t.init_conf);
  v("fuse_conf", t.fuse_conf);
  v("iou_match", t.iou_match);
  v("mevc_positive", t.mevc_positive);
  v("mevc_ignore", t.mevc_ignore);
  v("direct_conf", t.direct_conf);
}

template <class V>
void visit(V& v, LossWeights& w) {
  v("tau", w.tau);
  v("simple_threshold", w.simple_threshold);
  v("simple_mode", w.mode);
  v("adaptive", w.adaptive);
}

template <class V>
void visit(V& v, SceneConfig& s) {
  v("min_boxes", s.min_boxes);
  v("max_boxes", s.max_boxes);
  v("min_size", s.min_size);
  v("max_size", s.max_size);
  v("class_count", s.class_count);
  v("max_distractors", s.max_distractors);
  v("render_size", s.render_size);
}

template <class V>
void visit(V& v, DetectionModel& m) {
  v("class_count", m.class_count);
  v("tp_logit", m.tp_logit);
  v("fp_logit", m.fp_logit);
  v("logit_noise", m.logit_noise);
  v("iou_coupling", m.iou_coupling);
  v("distractor_share", m.distractor_share);
  v("fp_min_size", m.fp_min_size);
  v("fp_max_size", m.fp_max_size);
  v("persistence", m.persistence);
}

template <class V>
void visit(V& v, DetectorState& s) {
  v("loc_noise_sigma", s.loc_noise_sigma);
  v("miss_rate", s.miss_rate);
  v("fp_rate", s.fp_rate);
  v("conf_calibration", s.conf_calibration);
}

template <class V>
void visit(V& v, DomainGap& g) {
  v("loc_noise_sigma", g.loc_noise_sigma);
  v("miss_rate", g.miss_rate);
  v("fp_rate", g.fp_rate);
}

template <class V>
void visit(V& v, TrainingDynamics& d) {
  v("learn_gain", d.learn_gain);
  v("hard_sample_bonus", d.hard_sample_bonus);
  v("floor_loc", d.floor_loc);
  v("floor_miss", d.floor_miss);
  v("floor_fp", d.floor_fp);
  v("transfer_loc", d.transfer_loc);
  v("transfer_miss", d.transfer_miss);
  v("transfer_fp", d.transfer_fp);
}

template <class V>
void visit(V& v, MosaicConfig& m) {
  v("out_size", m.out_size);
  v("center_min", m.center_min);
  v("center_max", m.center_max);
  v("min_area_ratio", m.min_area_ratio);
}

template <class V>
void visit(V& v, AdversaryConfig& a) {
  v("loc_gain", a.loc_gain);
  v("cls_gain", a.cls_gain);
  v("toy_weight_scale", a.toy_weight_scale);
  v("mosaics_per_epoch", a.mosaics_per_epoch);
  v.nested("mosaic", a.mosaic);
}

template <class V>
void visit(V& v, RunSpec& r) {
  v("name", r.name);
  v("strategy", r.strategy);
  v("adaptive", r.adaptive);
  v("adversarial", r.adversarial);
  v("epsilon", r.epsilon);
  v("domain_mix", r.domain_mix);
  v("rescale_confidence", r.rescale_confidence);
  v("update_interval", r.update_interval);
}

template <class V>
void visit(V& v, ExperimentConfig& c) {
  v("preset", c.preset);
  v("seed", c.seed.value);
  v("output_dir", c.output_dir);
  v("dump_bank_snapshots", c.dump_bank_snapshots);
  v("dump_records", c.dump_records);
  v("dump_mosaic", c.dump_mosaic);

  SimulationConfig& b = c.base;
  v("name", b.name);
  v("strategy", b.strategy);
  v.nested("thresholds", b.thresholds);
  v("rescale_confidence", b.rescale_confidence);
  v.nested("loss", b.loss);
  v("adversarial", b.adversarial);
  v("epsilon", b.epsilon);
  v("domain_mix", b.domain_mix);
  v("epochs", b.epochs);
  v("update_interval", b.update_interval);
  v("supervision_conf", b.supervision_conf);
  v("student_conf", b.student_conf);
  v("student_epochs", b.student_epochs);
  v("report_conf", b.report_conf);
  v("train_images", b.train_images);
  v("eval_images", b.eval_images);
  v("source_images", b.source_images);
  v.nested("scenes", b.scenes);
  v.nested("detection", b.detection);
  v.nested("source_teacher", b.source_teacher);
  v.nested("source_student", b.source_student);
  v.nested("domain_gap", b.domain_gap);
  v.nested("dynamics", b.dynamics);
  v.nested("adversary", b.adversary);
  v("fp_bin_edges", b.fp_bin_edges);
  v.list("runs", c.runs);
}

// ---------------------------------------------------------------------------
// Writing.

template <class T>
json scalar_to_json(const T& value) {
  if constexpr (std::is_enum_v<T>) {
    return std::string(to_string(value));
  } else {
    return value;
  }
}

struct Writer {
  json out = json::object();

  template <class T>
  void operator()(const char* key, T& value) {
    out[key] = scalar_to_json(value);
  }
  template <class T>
  void operator()(const char* key, std::optional<T>& value) {
    if (value) out[key] = scalar_to_json(*value);
  }
  template <class S>
  void nested(const char* key, S& value) {
    Writer w;
    visit(w, value);
    out[key] = std::move(w.out);
  }
  template <class S>
  void list(const char* key, std::vector<S>& values) {
    json arr = json::array();
    for (auto& item : values) {
      Writer w;
      visit(w, item);
      arr.push_back(std::move(w.out));
    }
    out[key] = std::move(arr);
  }
};

// ---------------------------------------------------------------------------
// Reading, with JSON-pointer -> line mapping for error messages.

class LineIndex {
 public:
  explicit LineIndex(std::string_view text) { scan(text); }

  int line_of(const std::string& pointer) const {
    const auto it = lines_.find(pointer);
    return it == lines_.end() ? 1 : it->second;
  }

 private:
  struct Frame {
    bool is_object;
    std::string pointer;
    std::string key;
    std::size_t index = 0;
    bool expect_key = true;
  };

  static std::string escape(std::string_view key) {
    std::string out;
    for (char c : key) {
      if (c == '~') out += "~0";
      else if (c == '/') out += "~1";
      else out += c;
    }
    return out;
  }

  std::string value_pointer() const {
    if (stack_.empty()) return "";
    const auto& f = stack_.back();
    return f.pointer + "/" + (f.is_object ? escape(f.key) : std::to_string(f.index));
  }

  void scan(std::string_view text) {
    int line = 1;
    for (std::size_t i = 0; i < text.size(); ++i) {
      const char c = text[i];
      if (c == '\n') {
        ++line;
        continue;
      }
      if (c == ' ' || c == '\t' || c == '\r' || c == ':') continue;
      if (c == ',') {
        if (!stack_.empty()) {
          auto& f = stack_.back();
          if (f.is_object) f.expect_key = true;
          else ++f.index;
        }
        continue;
      }
      if (c == '}' || c == ']') {
        stack_.pop_back();
        continue;
      }
      if (c == '"') {
        std::string s;
        for (++i; i < text.size() && text[i] != '"'; ++i) {
          if (text[i] == '\\' && i + 1 < text.size()) ++i;
          s += text[i];
        }
        if (!stack_.empty() && stack_.back().is_object && stack_.back().expect_key) {
          stack_.back().key = s;
          stack_.back().expect_key = false;
          continue;
        }
        lines_.emplace(value_pointer(), line);
        continue;
      }
      const std::string here = value_pointer();
      lines_.emplace(here, line);
      if (c == '{' || c == '[') {
        stack_.push_back(Frame{c == '{', here, {}, 0, true});
        continue;
      }
      while (i + 1 < text.size() && std::string_view(",}] \t\r\n").find(text[i + 1]) == std::string_view::npos) {
        ++i;
      }
    }
  }

  std::vector<Frame> stack_;
  std::map<std::string, int> lines_;
};

[[noreturn]] void fail(const LineIndex& lines, const std::string& pointer, const std::string& what) {
  throw ValidationError(
      fmt::format("config line {}: {}: {}", lines.line_of(pointer), pointer.empty() ? "/" : pointer, what));
}

class Reader {
 public:
  Reader(const json& obj, std::string pointer, const LineIndex& lines)
      : obj_(obj), pointer_(std::move(pointer)), lines_(lines) {
    if (!obj_.is_object()) fail(lines_, pointer_, "expected an object");
  }

  template <class T>
  void operator()(const char* key, T& out) {
    if (const json* v = take(key)) read_value(*v, child(key), out);
  }
  template <class T>
  void operator()(const char* key, std::optional<T>& out) {
    if (const json* v = take(key)) {
      T value{};
      read_value(*v, child(key), value);
      out = value;
    }
  }
  template <class S>
  void nested(const char* key, S& out) {
    if (const json* v = take(key)) {
      Reader r(*v, child(key), lines_);
      visit(r, out);
      r.finish();
    }
  }
  template <class S>
  void list(const char* key, std::vector<S>& out) {
    const json* v = take(key);
    if (!v) return;
    const std::string ptr = child(key);
    if (!v->is_array()) fail(lines_, ptr, "expected an array");
    out.clear();
    for (std::size_t i = 0; i < v->size(); ++i) {
      S item{};
      Reader r((*v)[i], ptr + "/" + std::to_string(i), lines_);
      visit(r, item);
      r.finish();
      out.push_back(std::move(item));
    }
  }

  void finish() const {
    for (const auto& [key, value] : obj_.items()) {
      if (!seen_.contains(key)) fail(lines_, child(key), "unknown key");
    }
  }

 private:
  const json* take(const char* key) {
    seen_.insert(key);
    const auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  std::string child(const std::string& key) const { return pointer_ + "/" + key; }

  void read_value(const json& v, const std::string& ptr, bool& out) const {
    if (!v.is_boolean()) fail(lines_, ptr, "expected true or false");
    out = v.get<bool>();
  }
  void read_value(const json& v, const std::string& ptr, int& out) const {
    if (!v.is_number_integer()) fail(lines_, ptr, "expected an integer");
    const auto n = v.get<std::int64_t>();
    if (n < std::numeric_limits<int>::min() || n > std::numeric_limits<int>::max()) {
      fail(lines_, ptr, "integer out of range");
    }
    out = static_cast<int>(n);
  }
  void read_value(const json& v, const std::string& ptr, std::uint64_t& out) const {
    if (!v.is_number_unsigned()) fail(lines_, ptr, "expected a non-negative integer");
    out = v.get<std::uint64_t>();
  }
  void read_value(const json& v, const std::string& ptr, double& out) const {
    if (!v.is_number()) fail(lines_, ptr, "expected a number");
    out = v.get<double>();
  }
  void read_value(const json& v, const std::string& ptr, std::string& out) const {
    if (!v.is_string()) fail(lines_, ptr, "expected a string");
    out = v.get<std::string>();
  }
  void read_value(const json& v, const std::string& ptr, std::vector<double>& out) const {
    if (!v.is_array()) fail(lines_, ptr, "expected an array of numbers");
    out.clear();
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) fail(lines_, ptr + "/" + std::to_string(i), "expected a number");
      out.push_back(v[i].get<double>());
    }
  }
  template <class E>
    requires std::is_enum_v<E>
  void read_value(const json& v, const std::string& ptr, E& out) const {
    std::string text;
    read_value(v, ptr, text);
    try {
      if constexpr (std::is_same_v<E, BankStrategy>) out = parse_bank_strategy(text);
      else if constexpr (std::is_same_v<E, SimpleLossMode>) out = parse_simple_loss_mode(text);
    } catch (const ValidationError& e) {
      fail(lines_, ptr, e.what());
    }
  }

  const json& obj_;
  std::string pointer_;
  const LineIndex& lines_;
  std::set<std::string> seen_;
};

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Which part of the document a validation message most likely concerns.
std::string pointer_for(std::string_view message) {
  static const std::pair<const char*, const char*> hints[] = {
      {"update_interval", "/update_interval"}, {"epochs", "/epochs"},
      {"epsilon", "/epsilon"},                 {"bin edges", "/fp_bin_edges"},
      {"init_conf", "/thresholds"},            {"fuse_conf", "/thresholds"},
      {"iou_match", "/thresholds"},            {"tau", "/loss"},
      {"simple_threshold", "/loss"},           {"scene", "/scenes"},
      {"image counts", "/train_images"},       {"run", "/runs"},
  };
  for (const auto& [needle, pointer] : hints) {
    if (message.find(needle) != std::string_view::npos) return pointer;
  }
  return "";
}

}  // namespace

void ExperimentConfig::validate() const {
  std::set<std::string> names;
  for (const auto& run : resolve_runs(*this)) {
    run.validate();
    if (!names.insert(run.name).second) throw ValidationError(fmt::format("duplicate run name '{}'", run.name));
  }
  if (output_dir.empty()) throw ValidationError("output_dir must not be empty");
}

std::vector<SimulationConfig> resolve_runs(const ExperimentConfig& cfg) {
  if (cfg.runs.empty()) return {cfg.base};
  std::vector<SimulationConfig> out;
  for (const auto& r : cfg.runs) {
    if (r.name.empty()) throw ValidationError("every run needs a non-empty name");
    SimulationConfig s = cfg.base;
    s.name = r.name;
    if (r.strategy) s.strategy = *r.strategy;
    if (r.adaptive) s.loss.adaptive = *r.adaptive;
    if (r.adversarial) s.adversarial = *r.adversarial;
    if (r.epsilon) s.epsilon = *r.epsilon;
    if (r.domain_mix) s.domain_mix = *r.domain_mix;
    if (r.rescale_confidence) s.rescale_confidence = *r.rescale_confidence;
    if (r.update_interval) s.update_interval = *r.update_interval;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::string> preset_names() { return {"default", "paper-dynamics", "eps-ablation", "interval-10"}; }

namespace {

RunSpec run(std::string name, BankStrategy strategy, bool adaptive, bool adversarial) {
  RunSpec r;
  r.name = std::move(name);
  r.strategy = strategy;
  r.adaptive = adaptive;
  r.adversarial = adversarial;
  return r;
}

// Settings shared by the comparison presets.
void comparison_base(ExperimentConfig& c) {
  c.base.epochs = 30;
  c.base.train_images = 400;
  c.base.eval_images = 200;
}

}  // namespace

ExperimentConfig make_preset(std::string_view name) {
  ExperimentConfig c;
  c.preset = std::string(name);
  if (name == "default") return c;
  if (name == "paper-dynamics") {
    comparison_base(c);
    c.output_dir = "out/paper-dynamics";
    c.runs = {run("desimpl", BankStrategy::wbf, true, true), run("mevc", BankStrategy::mevc, false, false),
              run("direct", BankStrategy::direct, false, false)};
    c.runs[0].rescale_confidence = true;
    return c;
  }
  if (name == "eps-ablation") {
    comparison_base(c);
    c.output_dir = "out/eps-ablation";
    for (double eps : {0.0, 0.01, 0.05, 0.1}) {
      RunSpec r = run(fmt::format("eps-{}", eps), BankStrategy::wbf, true, true);
      r.epsilon = eps;
      c.runs.push_back(std::move(r));
    }
    return c;
  }
  if (name == "interval-10") {
    comparison_base(c);
    c.output_dir = "out/interval-10";
    c.base.update_interval = 10;
    return c;
  }
  throw ValidationError(fmt::format("unknown preset '{}'", name));
}

ExperimentConfig parse_experiment_config(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto upto = std::min<std::size_t>(e.byte, text.size());
    const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto), '\n');
    throw ValidationError(fmt::format("config line {}: malformed JSON", line));
  }
  const LineIndex lines(text);
  if (!doc.is_object()) fail(lines, "", "expected an object");

  ExperimentConfig cfg;
  if (const auto it = doc.find("preset"); it != doc.end()) {
    if (!it->is_string()) fail(lines, "/preset", "expected a string");
    try {
      cfg = make_preset(it->get<std::string>());
    } catch (const ValidationError& e) {
      fail(lines, "/preset", e.what());
    }
  }
  Reader reader(doc, "", lines);
  visit(reader, cfg);
  reader.finish();
  try {
    cfg.validate();
  } catch (const ValidationError& e) {
    fail(lines, pointer_for(e.what()), e.what());
  }
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open config {}", path));
  std::stringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw IoError(fmt::format("cannot read config {}", path));
  return parse_experiment_config(buf.str());
}

json to_json(const ExperimentConfig& cfg) {
  Writer w;
  ExperimentConfig copy = cfg;
  visit(w, copy);
  return w.out;
}

std::string config_hash(const ExperimentConfig& cfg) {
  json doc = to_json(cfg);
  doc.erase("output_dir");
  return fmt::format("{:016x}", fnv1a(doc.dump()));
}

}  // namespace desimpl
