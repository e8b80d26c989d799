#include "fairdefer/dm.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>

#include "fairdefer/metrics.hpp"

namespace fairdefer {

const char* dm_scenario_name(DmScenario s) {
  switch (s) {
    case DmScenario::high_accuracy: return "high_accuracy";
    case DmScenario::highly_biased: return "highly_biased";
    case DmScenario::inconsistent: return "inconsistent";
    case DmScenario::oracle: return "oracle";
    case DmScenario::constant_loss: return "constant_loss";
  }
  return "?";
}

DmScenario dm_scenario_from_name(const std::string& name) {
  if (name == "high_accuracy") return DmScenario::high_accuracy;
  if (name == "highly_biased") return DmScenario::highly_biased;
  if (name == "inconsistent") return DmScenario::inconsistent;
  if (name == "oracle") return DmScenario::oracle;
  if (name == "constant_loss") return DmScenario::constant_loss;
  throw Error("unknown DM scenario: " + name);
}

void DmCorruption::validate() const {
  require(flip_prob >= 0.0 && flip_prob <= 1.0,
          "DmCorruption: flip_prob must be in [0,1]");
  require(aux_value == 0 || aux_value == 1,
          "DmCorruption: aux_value must be 0 or 1");
}

void DmModel::validate() const {
  bool learned = scenario == DmScenario::high_accuracy ||
                 scenario == DmScenario::highly_biased ||
                 scenario == DmScenario::inconsistent;
  require(base.has_value() == learned,
          "DmModel: base network present iff the scenario is learned");
  require(corruption.has_value() == (scenario == DmScenario::inconsistent),
          "DmModel: corruption present iff scenario is inconsistent");
  require(constant_loss_value.has_value() ==
              (scenario == DmScenario::constant_loss),
          "DmModel: constant_loss_value present iff scenario is constant_loss");
  if (base) base->validate();
  if (corruption) corruption->validate();
  if (constant_loss_value)
    require(*constant_loss_value <= 0.0,
            "DmModel: constant loss alpha must be <= 0");
}

DmModel train_dm(const Dataset& train_data, DmScenario scenario,
                 const TrainConfig& config, uint64_t init_seed,
                 int hidden_units,
                 const std::optional<DmCorruption>& corruption) {
  require(scenario == DmScenario::high_accuracy ||
              scenario == DmScenario::highly_biased ||
              scenario == DmScenario::inconsistent,
          "train_dm: scenario is not a learned DM");
  require(train_data.dm_side_info.has_value(),
          "train_dm: dataset has no side information Z");
  Dataset dm_view = train_data.with_side_info_appended();
  LossSpec spec;
  spec.kind = LossSpec::Kind::fair_binary;
  spec.alpha_fair = scenario == DmScenario::highly_biased ? -0.1 : 0.0;
  auto [params, history] =
      train(dm_view, std::nullopt, spec, config, init_seed, hidden_units);
  (void)history;
  DmModel dm;
  dm.scenario = scenario;
  dm.base = std::move(params);
  if (scenario == DmScenario::inconsistent) {
    require(corruption.has_value(),
            "train_dm: inconsistent scenario needs a corruption spec");
    dm.corruption = corruption;
  }
  dm.validate();
  return dm;
}

DmModel oracle_dm() {
  DmModel dm;
  dm.scenario = DmScenario::oracle;
  return dm;
}

DmModel constant_loss_dm(double alpha) {
  require(alpha <= 0.0, "constant_loss_dm: alpha must be <= 0");
  DmModel dm;
  dm.scenario = DmScenario::constant_loss;
  dm.constant_loss_value = alpha;
  return dm;
}

Vector constant_loss_predictions(const Vector& y, double alpha) {
  require(alpha <= 0.0, "constant_loss_predictions: alpha must be <= 0");
  double e = std::exp(alpha);
  Vector out(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i)
    out[i] = y[i] * e + (1.0 - y[i]) * (1.0 - e);
  return out;
}

Vector corrupt_dm(const Vector& hard_preds, const IntVector& aux,
                  const DmCorruption& corruption) {
  corruption.validate();
  require(hard_preds.size() == aux.size(), "corrupt_dm: length mismatch");
  int selected = 0;
  for (Eigen::Index i = 0; i < aux.size(); ++i)
    if (aux[i] == corruption.aux_value) ++selected;
  if (selected == 0)
    std::cerr << "warning: corrupt_dm predicate (aux_group == "
              << corruption.aux_value << ") selects no examples\n";
  std::mt19937_64 rng(corruption.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Vector out = hard_preds;
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    require(out[i] == 0.0 || out[i] == 1.0,
            "corrupt_dm: corruption is defined on hard predictions");
    // Draw in example order even for untouched rows so the flip
    // pattern does not depend on the non-subgroup examples present.
    double u = unif(rng);
    if (aux[i] == corruption.aux_value && u < corruption.flip_prob)
      out[i] = 1.0 - out[i];
  }
  return out;
}

DmOutputs dm_predict(const DmModel& dm, const Dataset& data) {
  dm.validate();
  data.validate();
  DmOutputs out;
  switch (dm.scenario) {
    case DmScenario::oracle:
      out.probs = data.labels.unaryExpr([](double y) { return clamp_prob(y); });
      break;
    case DmScenario::constant_loss:
      out.probs = constant_loss_predictions(data.labels, *dm.constant_loss_value);
      break;
    default: {
      Dataset dm_view = data.with_side_info_appended();
      out.probs = forward_batch(*dm.base, dm_view.features)
                      .col(0)
                      .unaryExpr([](double v) { return sigmoid(v); });
      break;
    }
  }
  out.hard.resize(out.probs.size());
  for (Eigen::Index i = 0; i < out.probs.size(); ++i)
    out.hard[i] = binarize(out.probs[i]);
  if (dm.scenario == DmScenario::inconsistent) {
    require(data.aux_group.has_value(),
            "dm_predict: inconsistent DM needs the auxiliary group");
    out.hard = corrupt_dm(out.hard, *data.aux_group, *dm.corruption);
    out.probs = out.hard;  // downstream losses consume the corrupted labels
  }
  return out;
}

void save_dm_predictions(const std::filesystem::path& path,
                         const std::vector<std::string>& example_ids,
                         const DmOutputs& outputs) {
  require(static_cast<Eigen::Index>(example_ids.size()) == outputs.probs.size() &&
              outputs.probs.size() == outputs.hard.size(),
          "save_dm_predictions: length mismatch");
  std::ofstream csv(path);
  require(csv.good(), "save_dm_predictions: cannot write " + path.string());
  csv << "example_id,y_dm_prob,y_dm_hard\n";
  char buf[32];
  for (size_t i = 0; i < example_ids.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", outputs.probs[i]);
    csv << example_ids[i] << "," << buf << ","
        << static_cast<int>(outputs.hard[i]) << "\n";
  }
}

DmOutputs load_dm_predictions(const std::filesystem::path& path,
                              const std::vector<std::string>& expected_ids) {
  RawTable table = load_csv(path, {"example_id", "y_dm_prob", "y_dm_hard"});
  require(table.rows.size() == expected_ids.size(),
          "load_dm_predictions: row count does not match the dataset");
  DmOutputs out;
  out.probs.resize(table.rows.size());
  out.hard.resize(table.rows.size());
  for (size_t i = 0; i < table.rows.size(); ++i) {
    require(table.rows[i][0] == expected_ids[i],
            "load_dm_predictions: example_id mismatch at row " +
                std::to_string(i));
    out.probs[i] = std::stod(table.rows[i][1]);
    out.hard[i] = std::stod(table.rows[i][2]);
  }
  return out;
}

}  // namespace fairdefer
