#pragma once

#include <filesystem>

#include <json.hpp>

#include "fairdefer/data.hpp"
#include "fairdefer/dm.hpp"
#include "fairdefer/pipeline.hpp"

namespace fairdefer {

enum class DatasetKind { synthetic, compas, health, saved };

const char* dataset_kind_name(DatasetKind k);
DatasetKind dataset_kind_from_name(const std::string& name);

struct DatasetSpec {
  DatasetKind kind = DatasetKind::synthetic;
  std::filesystem::path path;  // CSV for compas/health, directory for saved
  double train_fraction = 0.8;
  SynthSpec synth;
};

struct DmSpec {
  DmScenario scenario = DmScenario::high_accuracy;
  DmCorruption corruption;           // used by the inconsistent scenario
  double constant_loss_alpha = 0.0;  // used by the constant_loss scenario
};

/// The single-document run configuration every CLI command consumes.
/// Defaults are filled at parse time; the effective config (defaults
/// included) is what commands echo into the output directory.
struct RunConfig {
  uint64_t seed = 0;  // mandatory in the document
  std::filesystem::path output_dir = "out";
  DatasetSpec dataset;
  ModelFamily family = ModelFamily::fair_binary;
  int hidden_units = 5;
  LossSpec loss;
  TrainConfig train;
  DmSpec dm;
  std::vector<double> sweep_alpha_fair = {0.0};
  std::vector<double> sweep_gamma = {0.0};
  int runs_per_setting = 5;
  std::vector<std::pair<double, double>> bins = {{0.0, 0.3},
                                                 {0.3, 0.7},
                                                 {0.7, 1.0}};

  void validate() const;
};

/// Parses and validates a JSON run config. Unknown keys are rejected by
/// name; missing mandatory fields are reported all at once.
RunConfig parse_config(const std::filesystem::path& path);
RunConfig parse_config_json(const nlohmann::json& j);

/// The effective configuration with every default made explicit.
nlohmann::ordered_json effective_config_json(const RunConfig& config);

/// Loads (or generates) the dataset named by the config and returns the
/// train/test pair. Synthetic data is generated from config.seed.
std::pair<Dataset, Dataset> load_config_dataset(const RunConfig& config);

}  // namespace fairdefer
