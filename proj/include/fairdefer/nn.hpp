#pragma once

#include <optional>

#include "fairdefer/data.hpp"
#include "fairdefer/losses.hpp"
#include "fairdefer/types.hpp"

namespace fairdefer {

enum class HeadKind { binary_logit, ordinal_threshold, gated_two_output, variational };

const char* head_kind_name(HeadKind k);
HeadKind head_kind_from_name(const std::string& name);

/// One sigmoid hidden layer plus a linear head. The ordinal head owns
/// its trainable thresholds, one (t0, t1) pair per sensitive group,
/// parametrized as (t0, gap_raw) with t1 = t0 + softplus(gap_raw) so
/// t0 <= t1 holds throughout training.
struct ModelParams {
  int input_dim = 0;
  int hidden_units = 0;
  Matrix hidden_weights;  // hidden_units x input_dim
  Vector hidden_bias;     // hidden_units
  Matrix head_weights;    // head_outputs x hidden_units
  Vector head_bias;       // head_outputs
  HeadKind head_kind = HeadKind::binary_logit;
  std::vector<Eigen::Vector2d> threshold_params;  // ordinal head only

  int head_outputs() const;
  ThresholdSet thresholds() const;
  Eigen::Index param_count() const;
  Vector flatten() const;
  void set_flat(const Vector& flat);
  void validate() const;

  /// Seeded uniform [-r, r] initialization, r = sqrt(6/(fan_in+fan_out)).
  static ModelParams init(int input_dim, int hidden_units, HeadKind kind,
                          uint64_t seed, int threshold_groups = 1);
};

/// Head logits for one example (no output nonlinearity).
Vector forward(const ModelParams& params, const Vector& features);

/// Rows of head logits for a batch.
Matrix forward_batch(const ModelParams& params, const Matrix& features);

struct AdamState {
  Vector first_moment;
  Vector second_moment;
  long step_count = 0;
  double learning_rate = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState init(Eigen::Index n_params, double learning_rate = 1e-2);
  void validate() const;
};

/// Standard bias-corrected ADAM update, in place. Throws on a
/// non-finite gradient.
void adam_step(AdamState& state, ModelParams& params, const Vector& grad);

struct TrainConfig {
  int patience_epochs = 50;
  int max_epochs = 2000;
  double validation_fraction = 0.2;
  int batch_size = 0;  // 0 = full batch
  uint64_t seed = 0;
  double learning_rate = 1e-2;

  void validate() const;
};

/// Per-batch context the losses need beyond the features.
struct LossInputs {
  Vector labels;
  IntVector sensitive;
  std::optional<Vector> dm_probs;   // required for defer
  std::optional<Vector> gate_noise; // uniforms, one per example, for sampled gates
};

/// Loss value at the given parameters; identical quantity to what
/// gradient() differentiates.
double eval_loss(const ModelParams& params, const Matrix& features,
                 const LossInputs& inputs, const LossSpec& spec);

/// Exact analytic gradient of eval_loss w.r.t. the flattened
/// parameters (for sampled gates, of the relaxed surrogate actually
/// evaluated; with stop_gradient_through_model, the gate path does not
/// reach the trunk or model head).
Vector gradient(const ModelParams& params, const Matrix& features,
                const LossInputs& inputs, const LossSpec& spec);

struct TrainingHistory {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  int best_epoch = -1;
  double best_val_loss = 0.0;
};

/// Full-batch (or minibatch) ADAM with early stopping on the
/// validation loss; returns the parameters at the best validation
/// epoch. Deterministic given (init_seed, config, dataset order).
std::pair<ModelParams, TrainingHistory> train(
    const Dataset& data, const std::optional<Vector>& dm_probs,
    const LossSpec& spec, const TrainConfig& config, uint64_t init_seed,
    int hidden_units);

}  // namespace fairdefer
