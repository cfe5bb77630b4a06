#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "desimpl/detector_sim.hpp"
#include "desimpl/experiment_config.hpp"

namespace desimpl {

/// Runs every configured run in order, stamping the config hash.
std::vector<ExperimentReport> run_experiment(const ExperimentConfig& cfg);

/// Fixed header, one row per run per epoch. student_ap50 is filled on the
/// final row of each run only.
std::string report_csv(const std::vector<ExperimentReport>& reports);
const std::vector<std::string>& report_columns();

/// Per-record dump (needs keep_records).
std::string records_csv(const std::vector<ExperimentReport>& reports);

/// Resolved config, hash and final metrics per run. No timestamp.
nlohmann::json metrics_json(const ExperimentConfig& cfg, const std::vector<ExperimentReport>& reports);

/// "name: mAP50=... simple=... student=...; ..." on one line.
std::string summary_line(const std::vector<ExperimentReport>& reports);

/// Writes report.csv, metrics.json and the optional dumps under `dir`:
/// records.csv, banks/<run>/epoch_NNN.jsonl, mosaic/<run>.{pgm,bin,json}.
void write_outputs(const std::filesystem::path& dir, const ExperimentConfig& cfg,
                   const std::vector<ExperimentReport>& reports);

}  // namespace desimpl
