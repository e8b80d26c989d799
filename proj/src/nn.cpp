#include "fairdefer/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace fairdefer {

namespace {

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// Clamped probability column from logits, with the derivative of the
// clamped value w.r.t. the logit (zero where the clamp is active).
struct ProbCol {
  Vector p;
  Vector dpdo;
};

ProbCol prob_col(const Vector& logits) {
  ProbCol out;
  out.p.resize(logits.size());
  out.dpdo.resize(logits.size());
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    double raw = sigmoid(logits[i]);
    out.p[i] = clamp_prob(raw);
    out.dpdo[i] = (raw < kProbFloor || raw > 1.0 - kProbFloor)
                      ? 0.0
                      : raw * (1.0 - raw);
  }
  return out;
}

}  // namespace

const char* head_kind_name(HeadKind k) {
  switch (k) {
    case HeadKind::binary_logit: return "binary_logit";
    case HeadKind::ordinal_threshold: return "ordinal_threshold";
    case HeadKind::gated_two_output: return "gated_two_output";
    case HeadKind::variational: return "variational";
  }
  return "?";
}

HeadKind head_kind_from_name(const std::string& name) {
  if (name == "binary_logit") return HeadKind::binary_logit;
  if (name == "ordinal_threshold") return HeadKind::ordinal_threshold;
  if (name == "gated_two_output") return HeadKind::gated_two_output;
  if (name == "variational") return HeadKind::variational;
  throw Error("unknown head kind: " + name);
}

int ModelParams::head_outputs() const {
  return head_kind == HeadKind::gated_two_output ? 2 : 1;
}

ThresholdSet ModelParams::thresholds() const {
  require(head_kind == HeadKind::ordinal_threshold,
          "thresholds(): not an ordinal head");
  ThresholdSet out;
  for (const auto& tp : threshold_params)
    out.groups.push_back({tp[0], tp[0] + softplus(tp[1])});
  return out;
}

Eigen::Index ModelParams::param_count() const {
  return hidden_weights.size() + hidden_bias.size() + head_weights.size() +
         head_bias.size() + 2 * static_cast<Eigen::Index>(threshold_params.size());
}

Vector ModelParams::flatten() const {
  Vector flat(param_count());
  Eigen::Index pos = 0;
  flat.segment(pos, hidden_weights.size()) =
      Eigen::Map<const Vector>(hidden_weights.data(), hidden_weights.size());
  pos += hidden_weights.size();
  flat.segment(pos, hidden_bias.size()) = hidden_bias;
  pos += hidden_bias.size();
  flat.segment(pos, head_weights.size()) =
      Eigen::Map<const Vector>(head_weights.data(), head_weights.size());
  pos += head_weights.size();
  flat.segment(pos, head_bias.size()) = head_bias;
  pos += head_bias.size();
  for (const auto& tp : threshold_params) {
    flat[pos++] = tp[0];
    flat[pos++] = tp[1];
  }
  return flat;
}

void ModelParams::set_flat(const Vector& flat) {
  require(flat.size() == param_count(), "set_flat: size mismatch");
  Eigen::Index pos = 0;
  Eigen::Map<Vector>(hidden_weights.data(), hidden_weights.size()) =
      flat.segment(pos, hidden_weights.size());
  pos += hidden_weights.size();
  hidden_bias = flat.segment(pos, hidden_bias.size());
  pos += hidden_bias.size();
  Eigen::Map<Vector>(head_weights.data(), head_weights.size()) =
      flat.segment(pos, head_weights.size());
  pos += head_weights.size();
  head_bias = flat.segment(pos, head_bias.size());
  pos += head_bias.size();
  for (auto& tp : threshold_params) {
    tp[0] = flat[pos++];
    tp[1] = flat[pos++];
  }
}

void ModelParams::validate() const {
  require(input_dim > 0 && hidden_units > 0, "ModelParams: empty dimensions");
  require(hidden_weights.rows() == hidden_units &&
              hidden_weights.cols() == input_dim,
          "ModelParams: hidden_weights shape mismatch");
  require(hidden_bias.size() == hidden_units,
          "ModelParams: hidden_bias shape mismatch");
  require(head_weights.rows() == head_outputs() &&
              head_weights.cols() == hidden_units,
          "ModelParams: head_weights shape mismatch");
  require(head_bias.size() == head_outputs(),
          "ModelParams: head_bias shape mismatch");
  if (head_kind == HeadKind::ordinal_threshold)
    require(!threshold_params.empty(), "ModelParams: ordinal head needs thresholds");
  else
    require(threshold_params.empty(),
            "ModelParams: thresholds only valid for the ordinal head");
  Vector flat = flatten();
  require(flat.allFinite(), "ModelParams: non-finite parameter value");
}

ModelParams ModelParams::init(int input_dim, int hidden_units, HeadKind kind,
                              uint64_t seed, int threshold_groups) {
  ModelParams p;
  p.input_dim = input_dim;
  p.hidden_units = hidden_units;
  p.head_kind = kind;
  std::mt19937_64 rng(seed);
  auto uniform_fill = [&rng](Matrix& m, int fan_in, int fan_out) {
    double r = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-r, r);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = dist(rng);
  };
  p.hidden_weights.resize(hidden_units, input_dim);
  uniform_fill(p.hidden_weights, input_dim, hidden_units);
  p.hidden_bias = Vector::Zero(hidden_units);
  int k = kind == HeadKind::gated_two_output ? 2 : 1;
  p.head_weights.resize(k, hidden_units);
  uniform_fill(p.head_weights, hidden_units, k);
  p.head_bias = Vector::Zero(k);
  if (kind == HeadKind::ordinal_threshold) {
    require(threshold_groups >= 1, "init: threshold_groups must be >= 1");
    // symmetric band around the score origin: t0 = -1, t1 = +1
    double gap_raw = std::log(std::exp(2.0) - 1.0);
    for (int g = 0; g < threshold_groups; ++g)
      p.threshold_params.push_back(Eigen::Vector2d(-1.0, gap_raw));
  }
  p.validate();
  return p;
}

Vector forward(const ModelParams& params, const Vector& features) {
  params.validate();
  require(features.size() == params.input_dim,
          "forward: feature length != input_dim");
  Vector h = (params.hidden_weights * features + params.hidden_bias)
                 .unaryExpr([](double v) { return sigmoid(v); });
  return params.head_weights * h + params.head_bias;
}

Matrix forward_batch(const ModelParams& params, const Matrix& features) {
  params.validate();
  require(features.cols() == params.input_dim,
          "forward_batch: feature width != input_dim");
  Matrix h = ((features * params.hidden_weights.transpose()).rowwise() +
              params.hidden_bias.transpose())
                 .unaryExpr([](double v) { return sigmoid(v); });
  return (h * params.head_weights.transpose()).rowwise() +
         params.head_bias.transpose();
}

AdamState AdamState::init(Eigen::Index n_params, double learning_rate) {
  AdamState s;
  s.first_moment = Vector::Zero(n_params);
  s.second_moment = Vector::Zero(n_params);
  s.learning_rate = learning_rate;
  return s;
}

void AdamState::validate() const {
  require(step_count >= 0, "AdamState: negative step count");
  require((second_moment.array() >= 0.0).all(),
          "AdamState: negative second moment");
}

void adam_step(AdamState& state, ModelParams& params, const Vector& grad) {
  require(grad.allFinite(), "adam_step: non-finite gradient");
  require(grad.size() == params.param_count(), "adam_step: gradient size mismatch");
  require(grad.size() == state.first_moment.size(),
          "adam_step: state size mismatch");
  state.step_count += 1;
  state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * grad;
  state.second_moment = state.beta2 * state.second_moment.array().matrix() +
                        (1.0 - state.beta2) * grad.cwiseProduct(grad);
  double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
  double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
  Vector m_hat = state.first_moment / bc1;
  Vector v_hat = state.second_moment / bc2;
  Vector flat = params.flatten();
  flat -= state.learning_rate *
          m_hat.cwiseQuotient(v_hat.cwiseSqrt().array().matrix() +
                              Vector::Constant(grad.size(), state.epsilon));
  params.set_flat(flat);
}

void TrainConfig::validate() const {
  require(patience_epochs >= 1, "TrainConfig: patience_epochs must be >= 1");
  require(max_epochs >= 1, "TrainConfig: max_epochs must be >= 1");
  require(validation_fraction > 0.0 && validation_fraction < 1.0,
          "TrainConfig: validation_fraction must be in (0,1)");
  require(batch_size >= 0, "TrainConfig: batch_size must be >= 0");
  require(learning_rate > 0.0, "TrainConfig: learning_rate must be > 0");
}

namespace {

// Loss value plus gradients w.r.t. the head outputs (and thresholds for
// the ordinal head). Everything downstream of the outputs is shared
// backprop.
struct OutputGrad {
  double value = 0.0;
  Matrix d_out;                                // n x k
  std::vector<Eigen::Vector2d> d_thresh;       // ordinal head only
  bool gate_column_stopped = false;            // zero gate column into the trunk
};

void check_loss_head(const LossSpec& spec, const ModelParams& params) {
  using K = LossSpec::Kind;
  HeadKind need = HeadKind::binary_logit;
  if (spec.kind == K::reject || spec.kind == K::defer)
    need = HeadKind::gated_two_output;
  if (spec.kind == K::punt || spec.kind == K::fair_punt)
    need = HeadKind::ordinal_threshold;
  require(params.head_kind == need,
          std::string("loss ") + LossSpec::kind_name(spec.kind) +
              " requires head " + head_kind_name(need));
}

OutputGrad loss_output_grad(const ModelParams& params, const Matrix& out,
                            const LossInputs& in, const LossSpec& spec) {
  spec.validate();
  Eigen::Index n = out.rows();
  require(n > 0, "loss: empty batch");
  require(in.labels.size() == n && in.sensitive.size() == n,
          "loss: labels/sensitive length mismatch");
  const Vector& y = in.labels;
  const IntVector& a = in.sensitive;
  OutputGrad og;
  og.d_out = Matrix::Zero(n, out.cols());

  using K = LossSpec::Kind;
  if (spec.kind == K::fair_binary) {
    ProbCol pc = prob_col(out.col(0));
    Vector d_p = Vector::Zero(n);
    double value = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      value -= log_lik(y[i], pc.p[i]);
      d_p[i] = -y[i] / pc.p[i] + (1.0 - y[i]) / (1.0 - pc.p[i]);
    }
    if (spec.alpha_fair != 0.0) {
      Vector d_di;
      value += spec.alpha_fair * soft_di_grad(y, a, pc.p, d_di);
      d_p += spec.alpha_fair * d_di;
    }
    og.value = value;
    og.d_out.col(0) = d_p.cwiseProduct(pc.dpdo);
    return og;
  }

  if (spec.kind == K::reject || spec.kind == K::defer) {
    ProbCol pm = prob_col(out.col(0));
    // The gate never enters a log, so it is not clamped.
    Vector gate(n), dgate_dlogit(n);
    if (spec.sampled_gate) {
      require(in.gate_noise && in.gate_noise->size() == n,
              "sampled gate requires per-example noise");
      for (Eigen::Index i = 0; i < n; ++i) {
        double u = (*in.gate_noise)[i];
        require(u > 0.0 && u < 1.0, "gate noise must be in (0,1)");
        double s = sigmoid((out(i, 1) + logit(u)) / spec.temperature);
        gate[i] = s;
        dgate_dlogit[i] = s * (1.0 - s) / spec.temperature;
      }
    } else {
      for (Eigen::Index i = 0; i < n; ++i) {
        double pi = sigmoid(out(i, 1));
        gate[i] = pi;
        dgate_dlogit[i] = pi * (1.0 - pi);
      }
    }
    Vector d_p = Vector::Zero(n), d_g = Vector::Zero(n);
    double value = 0.0;
    Vector nll_m(n);
    for (Eigen::Index i = 0; i < n; ++i)
      nll_m[i] = -log_lik(y[i], pm.p[i]);
    if (spec.kind == K::reject) {
      for (Eigen::Index i = 0; i < n; ++i) {
        value += (1.0 - gate[i]) * nll_m[i] - gate[i] * spec.gamma;
        d_p[i] = (1.0 - gate[i]) *
                 (-y[i] / pm.p[i] + (1.0 - y[i]) / (1.0 - pm.p[i]));
        d_g[i] = -nll_m[i] - spec.gamma;
      }
      if (spec.alpha_fair != 0.0) {
        Vector w = Vector::Ones(n) - gate;
        Vector dw_p, dw_w;
        value += spec.alpha_fair *
                 weighted_soft_di_grad(y, a, pm.p, w, dw_p, dw_w);
        d_p += spec.alpha_fair * dw_p;
        d_g -= spec.alpha_fair * dw_w;  // d w_i / d gate_i = -1
      }
    } else {
      require(in.dm_probs && in.dm_probs->size() == n,
              "loss_defer: DM predictions are a required training input");
      Vector dm(n), nll_d(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        dm[i] = clamp_prob((*in.dm_probs)[i]);
        nll_d[i] = -log_lik(y[i], dm[i]);
      }
      for (Eigen::Index i = 0; i < n; ++i) {
        value += (1.0 - gate[i]) * nll_m[i] + gate[i] * nll_d[i] -
                 gate[i] * spec.gamma;
        d_p[i] = (1.0 - gate[i]) *
                 (-y[i] / pm.p[i] + (1.0 - y[i]) / (1.0 - pm.p[i]));
        d_g[i] = nll_d[i] - nll_m[i] - spec.gamma;
      }
      if (spec.alpha_fair != 0.0) {
        if (spec.di_form == LossSpec::DiForm::squared_expected) {
          Vector dr_p, dr_g;
          value += spec.alpha_fair *
                   expected_squared_di_grad(y, a, pm.p, dm, gate, dr_p, dr_g);
          d_p += spec.alpha_fair * dr_p;
          d_g += spec.alpha_fair * dr_g;
        } else {
          Vector mix(n);
          for (Eigen::Index i = 0; i < n; ++i)
            mix[i] = (1.0 - gate[i]) * pm.p[i] + gate[i] * dm[i];
          Vector d_mix;
          value += spec.alpha_fair * soft_di_grad(y, a, mix, d_mix);
          for (Eigen::Index i = 0; i < n; ++i) {
            d_p[i] += spec.alpha_fair * d_mix[i] * (1.0 - gate[i]);
            d_g[i] += spec.alpha_fair * d_mix[i] * (dm[i] - pm.p[i]);
          }
        }
      }
    }
    og.value = value;
    og.d_out.col(0) = d_p.cwiseProduct(pm.dpdo);
    og.d_out.col(1) = d_g.cwiseProduct(dgate_dlogit);
    og.gate_column_stopped = spec.stop_gradient_through_model;
    return og;
  }

  // punt / fair_punt: ordinal head
  size_t n_groups = params.threshold_params.size();
  og.d_thresh.assign(n_groups, Eigen::Vector2d::Zero());  // d/d(t0), d/d(t1)
  Vector pos_raw(n), neg_raw(n);
  Vector d_x = Vector::Zero(n);
  // per-example sensitivities accumulated against raw P/N for the DI terms
  Vector dP_di = Vector::Zero(n), dN_di = Vector::Zero(n);
  struct Cache {
    double s0, s1, s0p, s1p;
    int g;
  };
  std::vector<Cache> cache(n);
  double value = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    int g = n_groups == 2 ? a[i] : 0;
    const auto& tp = params.threshold_params[g];
    double t0 = tp[0];
    double t1 = t0 + softplus(tp[1]);
    double x = out(i, 0);
    double s0 = sigmoid(x - t0);
    double s1 = sigmoid(x - t1);
    cache[i] = {s0, s1, s0 * (1.0 - s0), s1 * (1.0 - s1), g};
    pos_raw[i] = s1;
    neg_raw[i] = 1.0 - s0;
    double P = clamp_prob(s1);
    double N = clamp_prob(1.0 - s0);
    double I = clamp_prob(s0 - s1);
    value += -y[i] * std::log(P) - (1.0 - y[i]) * std::log(N) +
             spec.gamma * std::log(I);
    double dP = (s1 < kProbFloor || s1 > 1.0 - kProbFloor) ? 0.0 : -y[i] / P;
    double dN = (1.0 - s0 < kProbFloor || 1.0 - s0 > 1.0 - kProbFloor)
                    ? 0.0
                    : -(1.0 - y[i]) / N;
    double dI = (s0 - s1 < kProbFloor || s0 - s1 > 1.0 - kProbFloor)
                    ? 0.0
                    : spec.gamma / I;
    // chain into x, t0, t1 (dN/ds0 = -1, dI = s0 - s1)
    double dL_ds0 = -dN + dI;
    double dL_ds1 = dP - dI;
    d_x[i] += dL_ds0 * cache[i].s0p + dL_ds1 * cache[i].s1p;
    og.d_thresh[g][0] += -dL_ds0 * cache[i].s0p;  // d s0 / d t0 = -s0'
    og.d_thresh[g][1] += -dL_ds1 * cache[i].s1p;
  }
  if (spec.kind == K::fair_punt && spec.alpha_fair != 0.0) {
    Vector dp, dn;
    value += spec.alpha_fair * soft_di_grad(y, a, pos_raw, dp);
    value += spec.alpha_fair * soft_di_grad(y, a, neg_raw, dn);
    dP_di = spec.alpha_fair * dp;
    dN_di = spec.alpha_fair * dn;
    for (Eigen::Index i = 0; i < n; ++i) {
      double dL_ds0 = -dN_di[i];  // N = 1 - s0
      double dL_ds1 = dP_di[i];
      d_x[i] += dL_ds0 * cache[i].s0p + dL_ds1 * cache[i].s1p;
      og.d_thresh[cache[i].g][0] += -dL_ds0 * cache[i].s0p;
      og.d_thresh[cache[i].g][1] += -dL_ds1 * cache[i].s1p;
    }
  }
  og.value = value;
  og.d_out.col(0) = d_x;
  return og;
}

// Shared backprop from output gradients to the flat parameter vector.
Vector backprop(const ModelParams& params, const Matrix& X, const OutputGrad& og) {
  Matrix h = ((X * params.hidden_weights.transpose()).rowwise() +
              params.hidden_bias.transpose())
                 .unaryExpr([](double v) { return sigmoid(v); });
  Matrix d_head_w = og.d_out.transpose() * h;            // k x hu
  Vector d_head_b = og.d_out.colwise().sum().transpose();
  Matrix d_out_trunk = og.d_out;
  if (og.gate_column_stopped) d_out_trunk.col(1).setZero();
  Matrix d_h = d_out_trunk * params.head_weights;        // n x hu
  Matrix d_z = d_h.cwiseProduct(h.cwiseProduct(Matrix::Ones(h.rows(), h.cols()) - h));
  Matrix d_hidden_w = d_z.transpose() * X;               // hu x d
  Vector d_hidden_b = d_z.colwise().sum().transpose();

  ModelParams g = params;  // reuse the layout for flattening
  g.hidden_weights = d_hidden_w;
  g.hidden_bias = d_hidden_b;
  g.head_weights = d_head_w;
  g.head_bias = d_head_b;
  for (size_t gi = 0; gi < params.threshold_params.size(); ++gi) {
    // parameters are (t0, gap_raw) with t1 = t0 + softplus(gap_raw)
    double d_t0 = og.d_thresh[gi][0];
    double d_t1 = og.d_thresh[gi][1];
    double gap_raw = params.threshold_params[gi][1];
    g.threshold_params[gi][0] = d_t0 + d_t1;
    g.threshold_params[gi][1] = d_t1 * sigmoid(gap_raw);
  }
  return g.flatten();
}

}  // namespace

double eval_loss(const ModelParams& params, const Matrix& features,
                 const LossInputs& inputs, const LossSpec& spec) {
  check_loss_head(spec, params);
  Matrix out = forward_batch(params, features);
  return loss_output_grad(params, out, inputs, spec).value;
}

Vector gradient(const ModelParams& params, const Matrix& features,
                const LossInputs& inputs, const LossSpec& spec) {
  check_loss_head(spec, params);
  Matrix out = forward_batch(params, features);
  OutputGrad og = loss_output_grad(params, out, inputs, spec);
  return backprop(params, features, og);
}

std::pair<ModelParams, TrainingHistory> train(
    const Dataset& data, const std::optional<Vector>& dm_probs,
    const LossSpec& spec, const TrainConfig& config, uint64_t init_seed,
    int hidden_units) {
  config.validate();
  spec.validate();
  data.validate();
  if (dm_probs)
    require(dm_probs->size() == data.n(), "train: DM predictions length mismatch");

  // Deterministic stratified train/validation split.
  std::mt19937_64 split_rng(config.seed);
  std::vector<int> pos, neg;
  for (int i = 0; i < data.n(); ++i)
    (data.labels[i] == 1.0 ? pos : neg).push_back(i);
  std::shuffle(pos.begin(), pos.end(), split_rng);
  std::shuffle(neg.begin(), neg.end(), split_rng);
  std::vector<int> tr_idx, val_idx;
  for (auto* pool : {&pos, &neg}) {
    auto n_val = static_cast<size_t>(std::llround(config.validation_fraction *
                                                  static_cast<double>(pool->size())));
    val_idx.insert(val_idx.end(), pool->begin(), pool->begin() + n_val);
    tr_idx.insert(tr_idx.end(), pool->begin() + n_val, pool->end());
  }
  std::sort(tr_idx.begin(), tr_idx.end());
  std::sort(val_idx.begin(), val_idx.end());

  auto count_labels = [&](const std::vector<int>& idx, const char* name) {
    int ones = 0;
    for (int i : idx)
      if (data.labels[i] == 1.0) ++ones;
    require(ones >= 2 && static_cast<int>(idx.size()) - ones >= 2,
            std::string("train: degenerate ") + name +
                " split (need >= 2 examples of each label)");
  };
  count_labels(tr_idx, "training");
  count_labels(val_idx, "validation");

  auto slice_inputs = [&](const std::vector<int>& idx) {
    LossInputs in;
    in.labels.resize(idx.size());
    in.sensitive.resize(idx.size());
    if (dm_probs) in.dm_probs = Vector(idx.size());
    for (size_t k = 0; k < idx.size(); ++k) {
      in.labels[k] = data.labels[idx[k]];
      in.sensitive[k] = data.sensitive[idx[k]];
      if (dm_probs) (*in.dm_probs)[k] = (*dm_probs)[idx[k]];
    }
    return in;
  };
  auto slice_features = [&](const std::vector<int>& idx) {
    Matrix X(idx.size(), data.dim());
    for (size_t k = 0; k < idx.size(); ++k)
      X.row(k) = data.features.row(idx[k]);
    return X;
  };
  Matrix x_tr = slice_features(tr_idx);
  Matrix x_val = slice_features(val_idx);
  LossInputs in_tr = slice_inputs(tr_idx);
  LossInputs in_val = slice_inputs(val_idx);

  HeadKind kind = HeadKind::binary_logit;
  if (spec.kind == LossSpec::Kind::reject || spec.kind == LossSpec::Kind::defer)
    kind = HeadKind::gated_two_output;
  if (spec.kind == LossSpec::Kind::punt || spec.kind == LossSpec::Kind::fair_punt)
    kind = HeadKind::ordinal_threshold;

  ModelParams params = ModelParams::init(static_cast<int>(data.dim()),
                                         hidden_units, kind, init_seed);
  AdamState adam = AdamState::init(params.param_count(), config.learning_rate);

  // Epoch stream: gate noise and minibatch shuffles, fixed draw order.
  std::mt19937_64 epoch_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> unif(
      std::nextafter(0.0, 1.0), std::nextafter(1.0, 0.0));

  // History entries use the closed-form (noise-free) loss, including
  // the early-stopping metric.
  LossSpec eval_spec = spec;
  eval_spec.sampled_gate = false;

  TrainingHistory history;
  ModelParams best = params;
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;
  Eigen::Index n_tr = x_tr.rows();
  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    LossInputs step_in = in_tr;
    if (spec.sampled_gate) {
      Vector noise(n_tr);
      for (Eigen::Index i = 0; i < n_tr; ++i) noise[i] = unif(epoch_rng);
      step_in.gate_noise = std::move(noise);
    }
    if (config.batch_size == 0 || config.batch_size >= n_tr) {
      adam_step(adam, params, gradient(params, x_tr, step_in, spec));
    } else {
      std::vector<int> order(n_tr);
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), epoch_rng);
      for (Eigen::Index start = 0; start < n_tr; start += config.batch_size) {
        Eigen::Index len = std::min<Eigen::Index>(config.batch_size, n_tr - start);
        std::vector<int> batch(order.begin() + start, order.begin() + start + len);
        Matrix xb(len, x_tr.cols());
        LossInputs ib;
        ib.labels.resize(len);
        ib.sensitive.resize(len);
        if (step_in.dm_probs) ib.dm_probs = Vector(len);
        if (step_in.gate_noise) ib.gate_noise = Vector(len);
        for (Eigen::Index k = 0; k < len; ++k) {
          int i = batch[k];
          xb.row(k) = x_tr.row(i);
          ib.labels[k] = step_in.labels[i];
          ib.sensitive[k] = step_in.sensitive[i];
          if (step_in.dm_probs) (*ib.dm_probs)[k] = (*step_in.dm_probs)[i];
          if (step_in.gate_noise) (*ib.gate_noise)[k] = (*step_in.gate_noise)[i];
        }
        adam_step(adam, params, gradient(params, xb, ib, spec));
      }
    }
    double tl = eval_loss(params, x_tr, in_tr, eval_spec);
    double vl = eval_loss(params, x_val, in_val, eval_spec);
    history.train_loss.push_back(tl);
    history.val_loss.push_back(vl);
    if (vl < best_val) {
      best_val = vl;
      best = params;
      history.best_epoch = epoch;
      since_best = 0;
    } else {
      ++since_best;
    }
    if (since_best >= config.patience_epochs) break;
  }
  history.best_val_loss = best_val;
  return {best, history};
}

}  // namespace fairdefer
