#pragma once

#include <filesystem>
#include <optional>

#include "fairdefer/data.hpp"
#include "fairdefer/nn.hpp"

namespace fairdefer {

enum class DmScenario {
  high_accuracy,
  highly_biased,
  inconsistent,
  oracle,
  constant_loss
};

const char* dm_scenario_name(DmScenario s);
DmScenario dm_scenario_from_name(const std::string& name);

/// Prediction corruption for the inconsistent DM: hard predictions of
/// examples in the targeted auxiliary subgroup are flipped with
/// probability flip_prob, deterministically under the seed.
struct DmCorruption {
  int aux_value = 1;  // predicate: aux_group == aux_value
  double flip_prob = 0.3;
  uint64_t seed = 0;

  void validate() const;
};

/// A simulated decision-maker. Learned scenarios carry a network
/// trained on the Z-appended feature view; oracle/constant_loss
/// scenarios answer from the labels directly.
struct DmModel {
  DmScenario scenario = DmScenario::high_accuracy;
  std::optional<ModelParams> base;
  std::optional<DmCorruption> corruption;       // iff inconsistent
  std::optional<double> constant_loss_value;    // iff constant_loss

  void validate() const;
};

/// Trains the DM network with Z appended to the features; identical
/// protocol to the baseline model otherwise. high_accuracy and
/// inconsistent use alpha_fair = 0; highly_biased uses alpha_fair =
/// -0.1 (rewarding disparate impact). Throws when the dataset has no Z.
DmModel train_dm(const Dataset& train_data, DmScenario scenario,
                 const TrainConfig& config, uint64_t init_seed,
                 int hidden_units,
                 const std::optional<DmCorruption>& corruption = std::nullopt);

DmModel oracle_dm();
DmModel constant_loss_dm(double alpha);  // requires alpha <= 0

/// Per-example DM predictions for the constant-loss construction:
/// y_dm = Y * e^alpha + (1 - Y) * (1 - e^alpha), so the log-likelihood
/// is exactly alpha for every example.
Vector constant_loss_predictions(const Vector& y, double alpha);

/// Flips the hard predictions of examples with aux == corruption.aux_value,
/// each with probability flip_prob. Warns (stderr) when the predicate
/// selects nobody. Same seed, same output.
Vector corrupt_dm(const Vector& hard_preds, const IntVector& aux,
                  const DmCorruption& corruption);

struct DmOutputs {
  Vector probs;  // what the defer losses consume
  Vector hard;   // binarized at 0.5 (post-corruption when applicable)
};

/// Evaluates the DM on a dataset. Learned DMs see the Z-appended view
/// (built here, so callers keep the Z-blind view for the model);
/// oracle/constant_loss read the labels. For the inconsistent DM both
/// probs and hard carry the corrupted hard predictions, since flipping
/// a probability is ill-defined.
DmOutputs dm_predict(const DmModel& dm, const Dataset& data);

/// Frozen-DM exchange format: CSV with example_id, y_dm_prob, y_dm_hard.
void save_dm_predictions(const std::filesystem::path& path,
                         const std::vector<std::string>& example_ids,
                         const DmOutputs& outputs);
DmOutputs load_dm_predictions(const std::filesystem::path& path,
                              const std::vector<std::string>& expected_ids);

}  // namespace fairdefer
