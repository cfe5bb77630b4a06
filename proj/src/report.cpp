#include "desimpl/report.hpp"

#include <sstream>

#include <fmt/format.h>

#include "desimpl/detection_io.hpp"
#include "desimpl/image_io.hpp"

namespace desimpl {

std::vector<ExperimentReport> run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const std::string hash = config_hash(cfg);
  std::vector<ExperimentReport> out;
  for (auto run : resolve_runs(cfg)) {
    run.keep_records = run.keep_records || cfg.dump_records;
    run.keep_banks = run.keep_banks || cfg.dump_bank_snapshots;
    run.keep_mosaic = run.keep_mosaic || cfg.dump_mosaic;
    auto report = run_self_training(run, cfg.seed);
    report.config_hash = hash;
    out.push_back(std::move(report));
  }
  return out;
}

const std::vector<std::string>& report_columns() {
  static const std::vector<std::string> cols{
      "run",          "strategy",       "awl",          "adversarial",       "epsilon",
      "epoch",        "bank_updated",   "pl_precision", "pl_recall",         "pl_f1",
      "pl_map50",     "pl_count",       "simple_proportion", "simple_empty", "fp_rate_low",
      "fp_rate_high", "fp_hist",        "teacher_ap50", "student_ap50",      "total_loss",
      "record_count", "adv_strength",   "loc_noise_sigma", "miss_rate",      "fp_rate",
      "config_hash",  "seed"};
  return cols;
}

namespace {

std::string join(const std::vector<std::string>& parts, char sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

std::string hist_cell(const FPHistogram& h) {
  std::vector<std::string> bins;
  for (std::size_t b = 0; b < h.bins(); ++b) bins.push_back(fmt::format("{}/{}", h.fp[b], h.total[b]));
  return join(bins, ';');
}

const char* flag(bool b) { return b ? "1" : "0"; }

}  // namespace

std::string report_csv(const std::vector<ExperimentReport>& reports) {
  std::string out = join(report_columns(), ',') + "\n";
  for (const auto& rep : reports) {
    for (const auto& row : rep.rows) {
      const std::vector<std::string> cells{
          rep.run_name,
          std::string(to_string(rep.strategy)),
          flag(rep.awl),
          flag(rep.adversarial),
          format_double(rep.epsilon),
          std::to_string(row.epoch),
          flag(row.bank_updated),
          format_double(row.pseudo_labels.precision),
          format_double(row.pseudo_labels.recall),
          format_double(row.pseudo_labels.f1),
          format_double(row.pseudo_map50),
          std::to_string(row.pseudo_count),
          format_double(row.simple.value),
          flag(row.simple.empty),
          format_double(row.fp_rate_low),
          format_double(row.fp_rate_high),
          hist_cell(row.fp_hist),
          format_double(row.teacher_ap50),
          row.student_ap50 ? format_double(*row.student_ap50) : std::string(),
          format_double(row.total_loss),
          std::to_string(row.record_count),
          format_double(row.adversarial_strength),
          format_double(row.teacher.loc_noise_sigma),
          format_double(row.teacher.miss_rate),
          format_double(row.teacher.fp_rate),
          rep.config_hash,
          std::to_string(rep.seed.value)};
      out += join(cells, ',') + "\n";
    }
  }
  return out;
}

std::string records_csv(const std::vector<ExperimentReport>& reports) {
  std::string out = "run,epoch,adversarial,image_id,label_index,cls_loss,loc_loss,confidence,weight,is_tp,is_simple\n";
  for (const auto& rep : reports) {
    for (const auto& r : rep.records) {
      out += fmt::format("{},{},{},{},{},{},{},{},{},{},{}\n", rep.run_name, r.epoch, flag(r.adversarial),
                         r.record.image_id, r.record.label_index, format_double(r.record.cls_loss),
                         format_double(r.record.loc_loss), format_double(r.record.confidence),
                         format_double(r.weight), flag(r.record.is_true_positive), flag(r.simple));
    }
  }
  return out;
}

nlohmann::json metrics_json(const ExperimentConfig& cfg, const std::vector<ExperimentReport>& reports) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& rep : reports) {
    const auto& last = rep.rows.back();
    runs.push_back({{"name", rep.run_name},
                    {"strategy", std::string(to_string(rep.strategy))},
                    {"epochs", last.epoch},
                    {"pl_precision", last.pseudo_labels.precision},
                    {"pl_recall", last.pseudo_labels.recall},
                    {"pl_f1", last.pseudo_labels.f1},
                    {"pl_map50", last.pseudo_map50},
                    {"simple_proportion", last.simple.value},
                    {"simple_empty", last.simple.empty},
                    {"fp_rate_low", last.fp_rate_low},
                    {"fp_rate_high", last.fp_rate_high},
                    {"teacher_ap50", last.teacher_ap50},
                    {"student_ap50", rep.student_ap50}});
  }
  return {{"config", to_json(cfg)}, {"config_hash", config_hash(cfg)}, {"seed", cfg.seed.value}, {"runs", runs}};
}

std::string summary_line(const std::vector<ExperimentReport>& reports) {
  std::vector<std::string> parts;
  for (const auto& rep : reports) {
    const auto& last = rep.rows.back();
    parts.push_back(fmt::format("{}: mAP50={:.4f} simple={:.4f} student_ap50={:.4f}", rep.run_name,
                                last.pseudo_map50, last.simple.value, rep.student_ap50));
  }
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? "; " : "") + parts[i];
  return out;
}

void write_outputs(const std::filesystem::path& dir, const ExperimentConfig& cfg,
                   const std::vector<ExperimentReport>& reports) {
  write_file_atomic(dir / "report.csv", report_csv(reports));
  write_file_atomic(dir / "metrics.json", metrics_json(cfg, reports).dump(2) + "\n");
  if (cfg.dump_records) write_file_atomic(dir / "records.csv", records_csv(reports));
  for (const auto& rep : reports) {
    if (cfg.dump_bank_snapshots) {
      for (std::size_t e = 0; e < rep.banks.size(); ++e) {
        std::ostringstream buf;
        save_bank(rep.banks[e], buf);
        write_file_atomic(dir / "banks" / rep.run_name / fmt::format("epoch_{:03d}.jsonl", e), buf.str());
      }
    }
    if (cfg.dump_mosaic && rep.mosaic) {
      write_pnm(dir / "mosaic" / (rep.run_name + ".pgm"), rep.mosaic->image);
      write_image_raw(dir / "mosaic" / rep.run_name, rep.mosaic->image);
      write_detections_file(dir / "mosaic" / (rep.run_name + "_labels.jsonl"), {rep.mosaic->labels});
    }
  }
}

}  // namespace desimpl
