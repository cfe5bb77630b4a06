#include "desimpl/cli.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "desimpl/box_fusion.hpp"
#include "desimpl/detection_io.hpp"
#include "desimpl/eval_metrics.hpp"
#include "desimpl/experiment_config.hpp"
#include "desimpl/memory_bank.hpp"
#include "desimpl/report.hpp"

namespace desimpl {

namespace {

using nlohmann::json;

std::vector<double> parse_edges(const std::string& text) {
  std::vector<double> edges;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      edges.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ValidationError(fmt::format("bad bin edge '{}'", item));
    }
  }
  validate_bin_edges(edges);
  return edges;
}

MemoryBank read_bank(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open bank {}", path));
  return load_bank(in);
}

void write_bank(const std::string& path, const MemoryBank& bank) {
  std::ostringstream buf;
  save_bank(bank, buf);
  write_file_atomic(path, buf.str());
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string config;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::string output_dir;
};

void cmd_simulate(const SimulateArgs& a, std::ostream& out) {
  if (!a.config.empty() && !a.preset.empty()) throw ValidationError("give either --config or --preset, not both");
  ExperimentConfig cfg = !a.config.empty()  ? load_experiment_config(a.config)
                         : !a.preset.empty() ? make_preset(a.preset)
                                             : make_preset("default");
  if (a.seed) cfg.seed = Seed{*a.seed};
  if (!a.output_dir.empty()) cfg.output_dir = a.output_dir;
  cfg.validate();
  const auto reports = run_experiment(cfg);
  write_outputs(cfg.output_dir, cfg, reports);
  out << summary_line(reports) << "\n";
}

// ---------------------------------------------------------------------------

struct FuseArgs {
  std::vector<std::string> inputs;
  std::string output;
  std::string method = "wbf";
  double iou = 0.5;
  double sigma = 0.5;
  double score_floor = 0.001;
  bool rescale = false;
};

void cmd_fuse(const FuseArgs& a) {
  std::vector<std::map<std::string, LabelSet>> files;
  std::set<std::string> ids;
  for (const auto& path : a.inputs) {
    std::map<std::string, LabelSet> by_id;
    for (auto& set : read_detections(path, LabelKind::prediction)) {
      ids.insert(set.image_id);
      by_id.emplace(set.image_id, std::move(set));
    }
    files.push_back(std::move(by_id));
  }
  FusionConfig fusion{a.iou, a.rescale, static_cast<int>(files.size())};
  fusion.validate();

  std::vector<LabelSet> result;
  for (const auto& id : ids) {
    std::vector<LabelSet> sources;
    for (const auto& f : files) {
      const auto it = f.find(id);
      sources.push_back(it == f.end() ? LabelSet{id, {}, LabelKind::prediction} : it->second);
    }
    if (a.method == "wbf") {
      result.push_back(wbf(sources, fusion));
      continue;
    }
    std::vector<Detection> pooled;
    for (const auto& s : sources) pooled.insert(pooled.end(), s.detections.begin(), s.detections.end());
    const auto merged = make_label_set(id, std::move(pooled), LabelKind::prediction);
    if (a.method == "nms") {
      result.push_back(nms(merged, a.iou));
    } else if (a.method == "soft-nms") {
      result.push_back(soft_nms(merged, a.iou, a.sigma, a.score_floor));
    } else {
      throw ValidationError(fmt::format("unknown fusion method '{}'", a.method));
    }
  }
  write_detections_file(a.output, result);
}

// ---------------------------------------------------------------------------

struct BankArgs {
  std::string bank;
  std::string detections;
  std::string output;
  std::string strategy;
  double init_conf = BankThresholds{}.init_conf;
  double fuse_conf = BankThresholds{}.fuse_conf;
  double iou_match = BankThresholds{}.iou_match;
  bool positive_only = false;
  double min_score = 0.0;
  bool rescale = false;
};

void cmd_bank_init(const BankArgs& a) {
  BankThresholds t;
  t.init_conf = a.init_conf;
  t.fuse_conf = a.fuse_conf;
  t.iou_match = a.iou_match;
  t.validate();
  const auto strategy = parse_bank_strategy(a.strategy.empty() ? "wbf" : a.strategy);
  MemoryBank bank = init_bank(read_detections(a.detections, LabelKind::prediction), t, strategy);
  bank.rescale_confidence = a.rescale;
  write_bank(a.output, bank);
}

void cmd_bank_update(const BankArgs& a) {
  MemoryBank bank = read_bank(a.bank);
  if (!a.strategy.empty() && parse_bank_strategy(a.strategy) != bank.strategy) {
    throw ValidationError(fmt::format("bank {} was built with strategy '{}', not '{}'", a.bank,
                                      to_string(bank.strategy), a.strategy));
  }
  bank = update_bank(std::move(bank), read_detections(a.detections, LabelKind::prediction));
  write_bank(a.output.empty() ? a.bank : a.output, bank);
}

void cmd_bank_export(const BankArgs& a) {
  const MemoryBank bank = read_bank(a.bank);
  write_detections_file(a.output, bank_snapshot(bank, a.positive_only, a.min_score));
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string detections;
  std::string gt;
  std::string records;
  std::string output;
  std::string bins = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1";
  std::string bins_csv;
  int classes = 0;
  double simple_threshold = LossWeights{}.simple_threshold;
};

std::vector<LossRecord> read_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open records {}", path));
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(fmt::format("{}: missing header", path));
  std::map<std::string, std::size_t> col;
  {
    std::stringstream hs(line);
    std::string name;
    for (std::size_t i = 0; std::getline(hs, name, ','); ++i) col[name] = i;
  }
  for (const char* need : {"cls_loss", "loc_loss", "confidence", "is_tp"}) {
    if (!col.contains(need)) throw ValidationError(fmt::format("{}: missing column '{}'", path, need));
  }
  std::vector<LossRecord> out;
  for (int n = 2; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    for (std::string c; std::getline(ls, c, ',');) cells.push_back(c);
    try {
      LossRecord r;
      r.cls_loss = std::stod(cells.at(col["cls_loss"]));
      r.loc_loss = std::stod(cells.at(col["loc_loss"]));
      r.confidence = std::stod(cells.at(col["confidence"]));
      r.is_true_positive = cells.at(col["is_tp"]) == "1";
      validate_record(r);
      out.push_back(r);
    } catch (const ValidationError& e) {
      throw ValidationError(fmt::format("{}: line {}: {}", path, n, e.what()));
    } catch (const std::exception&) {
      throw ValidationError(fmt::format("{}: line {}: malformed record", path, n));
    }
  }
  return out;
}

void cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  const auto edges = parse_edges(a.bins);
  auto dets = read_detections(a.detections, LabelKind::prediction);
  auto gts = read_detections(a.gt, LabelKind::ground_truth);
  if (gts.empty()) throw ValidationError(fmt::format("ground-truth file {} is empty", a.gt));

  std::set<std::string> det_ids;
  std::set<std::string> gt_ids;
  for (const auto& s : dets) det_ids.insert(s.image_id);
  for (const auto& s : gts) gt_ids.insert(s.image_id);
  std::vector<std::string> missing_in_gt;
  std::vector<std::string> missing_in_dets;
  std::set_difference(det_ids.begin(), det_ids.end(), gt_ids.begin(), gt_ids.end(),
                      std::back_inserter(missing_in_gt));
  std::set_difference(gt_ids.begin(), gt_ids.end(), det_ids.begin(), det_ids.end(),
                      std::back_inserter(missing_in_dets));
  const bool mismatch = !missing_in_gt.empty() || !missing_in_dets.empty();
  if (mismatch) {
    std::vector<std::string> all = missing_in_gt;
    all.insert(all.end(), missing_in_dets.begin(), missing_in_dets.end());
    std::string list;
    for (const auto& id : all) list += (list.empty() ? "" : " ") + id;
    err << "warning: image ids differ between detections and ground truth; using the intersection. missing: "
        << list << "\n";
    std::erase_if(dets, [&](const LabelSet& s) { return !gt_ids.contains(s.image_id); });
    std::erase_if(gts, [&](const LabelSet& s) { return !det_ids.contains(s.image_id); });
  }

  int classes = a.classes;
  if (classes <= 0) {
    for (const auto* sets : {&dets, &gts}) {
      for (const auto& s : *sets) {
        for (const auto& d : s.detections) classes = std::max(classes, d.class_id + 1);
      }
    }
  }

  json result;
  result["warning"] = mismatch;
  result["missing_in_gt"] = missing_in_gt;
  result["missing_in_detections"] = missing_in_dets;
  try {
    const auto m = map50(dets, gts, std::max(classes, 1));
    result["map50"] = m.map;
    json per_class = json::array();
    for (const auto& ap : m.per_class) per_class.push_back(ap ? json(*ap) : json(nullptr));
    result["per_class_ap50"] = per_class;
  } catch (const ValidationError&) {
    result["map50"] = nullptr;
    result["per_class_ap50"] = json::array();
  }
  const auto q = detection_quality(dets, gts);
  result["precision"] = q.precision;
  result["recall"] = q.recall;
  result["f1"] = q.f1;

  const auto hist = fp_by_confidence(dets, gts, edges);
  json bins = json::array();
  for (std::size_t b = 0; b < hist.bins(); ++b) {
    bins.push_back({{"lo", hist.edges[b]},
                    {"hi", hist.edges[b + 1]},
                    {"fp", hist.fp[b]},
                    {"total", hist.total[b]},
                    {"rate", hist.rate(b)},
                    {"empty", hist.empty_bin(b)}});
  }
  result["fp_histogram"] = bins;

  if (!a.records.empty()) {
    LossWeights w;
    w.simple_threshold = a.simple_threshold;
    w.validate();
    const auto p = simple_proportion(read_records(a.records), w, true);
    result["simple_proportion"] = p.value;
    result["simple_empty"] = p.empty;
  }

  if (!a.bins_csv.empty()) {
    std::string csv = "lo,hi,fp,total,rate,empty\n";
    for (std::size_t b = 0; b < hist.bins(); ++b) {
      csv += fmt::format("{},{},{},{},{},{}\n", format_double(hist.edges[b]), format_double(hist.edges[b + 1]),
                         hist.fp[b], hist.total[b], format_double(hist.rate(b)), hist.empty_bin(b) ? 1 : 0);
    }
    write_file_atomic(a.bins_csv, csv);
  }

  const std::string text = result.dump(2) + "\n";
  if (a.output.empty()) {
    out << text;
  } else {
    write_file_atomic(a.output, text);
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Pseudo-label self-training toolkit", "desimpl"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Run a self-training simulation from a JSON config");
  simulate->add_option("--config,-c", sim.config, "Experiment config (JSON)");
  simulate->add_option("--preset", sim.preset, "Built-in preset instead of a config file");
  simulate->add_option("--seed", sim.seed, "Override the config seed");
  simulate->add_option("--output-dir,-o", sim.output_dir, "Override the output directory");

  FuseArgs fuse;
  auto* fuse_cmd = app.add_subcommand("fuse", "Fuse or suppress detections from one or more files");
  fuse_cmd->add_option("inputs", fuse.inputs, "Detection JSONL files")->required();
  fuse_cmd->add_option("--output,-o", fuse.output, "Output JSONL")->required();
  fuse_cmd->add_option("--method,-m", fuse.method, "wbf, nms or soft-nms")
      ->check(CLI::IsMember({"wbf", "nms", "soft-nms"}));
  fuse_cmd->add_option("--iou", fuse.iou, "IoU threshold");
  fuse_cmd->add_option("--sigma", fuse.sigma, "Soft-NMS Gaussian sigma");
  fuse_cmd->add_option("--score-floor", fuse.score_floor, "Soft-NMS score floor");
  fuse_cmd->add_flag("--rescale", fuse.rescale, "WBF min(n,T)/T confidence rescale");

  BankArgs bank;
  auto* bank_cmd = app.add_subcommand("bank", "Memory bank operations");
  bank_cmd->require_subcommand(1);
  auto* bank_init = bank_cmd->add_subcommand("init", "Create a bank from initial predictions");
  bank_init->add_option("--detections,-d", bank.detections)->required();
  bank_init->add_option("--output,-o", bank.output)->required();
  bank_init->add_option("--strategy,-s", bank.strategy)->check(CLI::IsMember({"wbf", "direct", "mevc"}));
  bank_init->add_option("--init-conf", bank.init_conf);
  bank_init->add_option("--fuse-conf", bank.fuse_conf);
  bank_init->add_option("--iou-match", bank.iou_match);
  bank_init->add_flag("--rescale", bank.rescale);
  auto* bank_update = bank_cmd->add_subcommand("update", "Merge new predictions into a bank");
  bank_update->add_option("--bank,-b", bank.bank)->required();
  bank_update->add_option("--detections,-d", bank.detections)->required();
  bank_update->add_option("--output,-o", bank.output, "Defaults to rewriting --bank");
  bank_update->add_option("--strategy,-s", bank.strategy, "Must match the bank header when given");
  auto* bank_export = bank_cmd->add_subcommand("export", "Write the bank as pseudo-label JSONL");
  bank_export->add_option("--bank,-b", bank.bank)->required();
  bank_export->add_option("--output,-o", bank.output)->required();
  bank_export->add_flag("--positive-only", bank.positive_only);
  bank_export->add_option("--min-score", bank.min_score);

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Evaluate detections against ground truth");
  eval->add_option("--detections,-d", ev.detections)->required();
  eval->add_option("--gt,-g", ev.gt)->required();
  eval->add_option("--records,-r", ev.records, "records.csv for the simple-sample proportion");
  eval->add_option("--output,-o", ev.output, "Metrics JSON (stdout when omitted)");
  eval->add_option("--bins", ev.bins, "Comma-separated confidence bin edges");
  eval->add_option("--bins-csv", ev.bins_csv, "Per-bin CSV output");
  eval->add_option("--classes", ev.classes, "Class count (inferred when omitted)");
  eval->add_option("--simple-threshold", ev.simple_threshold);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }

  try {
    if (simulate->parsed()) cmd_simulate(sim, out);
    else if (fuse_cmd->parsed()) cmd_fuse(fuse);
    else if (bank_init->parsed()) cmd_bank_init(bank);
    else if (bank_update->parsed()) cmd_bank_update(bank);
    else if (bank_export->parsed()) cmd_bank_export(bank);
    else if (eval->parsed()) cmd_eval(ev, out, err);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitOk;
}

}  // namespace desimpl
