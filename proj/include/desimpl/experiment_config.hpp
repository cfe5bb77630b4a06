#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "desimpl/detector_sim.hpp"

namespace desimpl {

/// Per-run overrides on top of the shared simulation settings. Unset fields
/// inherit from the base.
struct RunSpec {
  std::string name;
  std::optional<BankStrategy> strategy;
  std::optional<bool> adaptive;
  std::optional<bool> adversarial;
  std::optional<double> epsilon;
  std::optional<bool> domain_mix;
  std::optional<bool> rescale_confidence;
  std::optional<int> update_interval;
};

struct ExperimentConfig {
  std::string preset = "default";
  SimulationConfig base;
  std::vector<RunSpec> runs;  ///< empty = one run of the base config
  std::string output_dir = "out";
  Seed seed{20240917};
  bool dump_bank_snapshots = false;
  bool dump_records = false;
  bool dump_mosaic = false;

  void validate() const;
};

/// Built-in presets: default, paper-dynamics, eps-ablation, interval-10.
std::vector<std::string> preset_names();
/// Throws ValidationError for an unknown name.
ExperimentConfig make_preset(std::string_view name);

/// Parses a config document. An optional "preset" key selects the starting
/// point; every other key overrides it. Unknown keys, wrong types and
/// invalid values raise ValidationError naming the line ("config line N").
ExperimentConfig parse_experiment_config(std::string_view text);
/// Throws IoError when the file cannot be read.
ExperimentConfig load_experiment_config(const std::string& path);

/// Fully resolved document; parse_experiment_config(to_json(c).dump())
/// reproduces c.
nlohmann::json to_json(const ExperimentConfig& cfg);

/// FNV-1a 64 of the canonical dump with output_dir removed, as 16 hex digits.
std::string config_hash(const ExperimentConfig& cfg);

/// One SimulationConfig per run with the overrides applied.
std::vector<SimulationConfig> resolve_runs(const ExperimentConfig& cfg);

}  // namespace desimpl
