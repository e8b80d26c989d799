#pragma once

#include <filesystem>
#include <optional>

#include <json.hpp>

#include "fairdefer/metrics.hpp"
#include "fairdefer/nn.hpp"

namespace fairdefer {

nlohmann::ordered_json loss_spec_to_json(const LossSpec& spec);
LossSpec loss_spec_from_json(const nlohmann::json& j);

nlohmann::ordered_json metrics_to_json(const MetricsRecord& m);
MetricsRecord metrics_from_json(const nlohmann::json& j);

nlohmann::ordered_json threshold_set_to_json(const ThresholdSet& ts);
ThresholdSet threshold_set_from_json(const nlohmann::json& j);

nlohmann::ordered_json model_params_to_json(const ModelParams& p);
ModelParams model_params_from_json(const nlohmann::json& j);

/// The frozen-model artifact: architecture, parameters, head kind,
/// thresholds, loss configuration and seed — everything needed for a
/// bit-exact reload and re-evaluation.
struct SavedModel {
  ModelParams params;
  LossSpec spec;
  std::optional<ThresholdSet> posthoc_thresholds;
  uint64_t seed = 0;
};

void save_model(const SavedModel& model, const std::filesystem::path& path);
SavedModel load_model(const std::filesystem::path& path);

}  // namespace fairdefer
