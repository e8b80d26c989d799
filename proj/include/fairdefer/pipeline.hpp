#pragma once

#include <filesystem>

#include "fairdefer/bnn.hpp"
#include "fairdefer/dm.hpp"
#include "fairdefer/metrics.hpp"
#include "fairdefer/thresholds.hpp"

namespace fairdefer {

enum class ModelFamily { binary, fair_binary, reject, defer, posthoc, bnn };

const char* model_family_name(ModelFamily f);
ModelFamily model_family_from_name(const std::string& name);

/// Model-side outputs, already resolved to the test-time deferral rule
/// (pi > 0.5 for gated heads, PASS band for thresholds, uncertainty
/// threshold for the BNN).
struct ModelOutputs {
  Vector y_model;   // model probability (hard 0/1 for threshold decisions)
  Vector gate;      // deferral probability pi (0 when the family has no gate)
  IntVector defer;  // s in {0,1}
};

/// Eq. of the joint framework: y_system = (1-s) y_model + s y_dm.
std::vector<SystemPrediction> compose_system(const ModelOutputs& model,
                                             const DmOutputs& dm);

/// Full MetricsRecord of composed predictions on a held-out split.
/// Undefined DI / MSA cells are tagged, not zeroed.
MetricsRecord evaluate_system(const std::vector<SystemPrediction>& preds,
                              const Vector& y, const IntVector& a,
                              const std::optional<IntVector>& aux_group);

struct SweepSetting {
  double alpha_fair = 0.0;
  double gamma = 0.0;
};

struct SweepConfig {
  ModelFamily family = ModelFamily::defer;
  std::vector<SweepSetting> grid;
  int runs_per_setting = 5;
  uint64_t master_seed = 0;
  int hidden_units = 5;
  TrainConfig train;   // seed is overridden per run
  LossSpec base_loss;  // di_form / temperature / gating flags template
  int jobs = 1;        // settings run concurrently up to this bound

  void validate() const;
};

struct SweepPoint {
  SweepSetting setting;
  std::vector<uint64_t> run_seeds;
  std::vector<MetricsRecord> per_run;
  MetricsRecord median_metrics;
  int failed_runs = 0;
};

/// Componentwise median over per-run records; lower median for even
/// counts. Flags (di_defined, msa_defined) hold iff they hold in every run.
MetricsRecord median_metrics(const std::vector<MetricsRecord>& runs);

/// Trains runs_per_setting models per grid setting on the training
/// split, composes each with the DM, and evaluates on the test split.
/// A run that fails (non-finite loss, degenerate split) is retried once
/// with a fresh derived seed; a setting is dropped when more than half
/// its runs fail. All seeds derive from master_seed.
std::vector<SweepPoint> run_sweep(const Dataset& train_data,
                                  const Dataset& test_data, const DmModel& dm,
                                  const SweepConfig& config);

/// Indices into `points` of the (median error, median di) Pareto front.
std::vector<int> sweep_pareto_front(const std::vector<SweepPoint>& points);

/// Per-bin Pareto fronts over median deferral rate; bins are half-open
/// [a, b) and must partition [0, 1]. An empty bin yields an empty front.
std::vector<std::vector<int>> deferral_rate_breakdown(
    const std::vector<SweepPoint>& points,
    const std::vector<std::pair<double, double>>& bins);

struct OracleEquivalenceConfig {
  std::vector<double> gamma_rejects;
  double constant_loss_alpha = 0.0;  // <= 0; gamma_defer = gamma_reject - alpha
  int runs_per_setting = 5;
  uint64_t master_seed = 0;
  int hidden_units = 5;
  TrainConfig train;

  void validate() const;
};

struct OracleEquivalencePair {
  double gamma_reject = 0.0;
  double gamma_defer = 0.0;
  MetricsRecord reject_median;
  MetricsRecord defer_median;
  double error_diff = 0.0;     // |median error difference|
  double di_diff = 0.0;        // |median DI difference|
  double deferral_diff = 0.0;  // |median deferral-rate difference|
};

/// Trains matched-seed reject models and defer models whose training DM
/// is the constant-loss construction at alpha (oracle when alpha = 0),
/// with gamma_defer = gamma_reject - alpha, and reports paired test
/// differences. `test_dm` decides the deferred examples at test time
/// for both arms.
std::vector<OracleEquivalencePair> oracle_equivalence_experiment(
    const Dataset& train_data, const Dataset& test_data, const DmModel& test_dm,
    const OracleEquivalenceConfig& config);

struct ExperimentReport {
  std::string scenario;
  std::string model_family;
  std::vector<SweepPoint> points;
  std::vector<int> pareto_indices;
  std::string dataset_hash;
  std::string code_version;
  uint64_t master_seed = 0;

  void validate() const;
};

/// FNV-1a over the dataset's numeric content, as provenance.
std::string dataset_hash(const Dataset& data);

void save_report(const ExperimentReport& report,
                 const std::filesystem::path& path);
ExperimentReport load_report(const std::filesystem::path& path);

/// Plot-ready curve export: one row per sweep point with columns
/// alpha_fair, gamma, error, di, deferral_rate, per-group deferral, msa.
void save_curve_csv(const std::vector<SweepPoint>& points,
                    const std::filesystem::path& path);

}  // namespace fairdefer
