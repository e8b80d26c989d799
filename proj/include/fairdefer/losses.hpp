#pragma once

#include "fairdefer/metrics.hpp"
#include "fairdefer/types.hpp"

namespace fairdefer {

/// Configuration of a training loss. `gamma` is on the log-probability
/// scale for reject/defer (the theorem's gamma_reject / gamma_defer)
/// and is the IDK-mass coefficient for punt/fair_punt.
struct LossSpec {
  enum class Kind { fair_binary, reject, defer, punt, fair_punt };
  enum class DiForm { soft_mean, squared_expected };

  Kind kind = Kind::fair_binary;
  double alpha_fair = 0.0;
  double gamma = 0.0;
  double temperature = 0.5;            // Concrete relaxation
  bool sampled_gate = false;           // one relaxed sample per example per epoch
  bool stop_gradient_through_model = false;
  DiForm di_form = DiForm::soft_mean;

  void validate() const;
  static const char* kind_name(Kind k);
};

/// log-likelihood of label y under probability p, clamped.
/// l(Y, p) = Y log p + (1 - Y) log(1 - p) <= 0.
double log_lik(double y, double p);

/// Negative log-likelihood plus alpha * soft DI. Throws on an empty
/// DI conditioning cell.
double loss_fair_binary(const Vector& y, const IntVector& a, const Vector& p,
                        double alpha_fair);

/// Closed-form expectation over s ~ Ber(gate) of the rejection loss:
/// sum over i of (1-gate)*nll(y, y_model) - gate*gamma, plus
/// alpha * weighted soft DI over the predicted mass (weights 1-gate).
double loss_reject(const Vector& y, const IntVector& a, const Vector& y_model,
                   const Vector& gate, double gamma_reject, double alpha_fair);

/// Closed-form expectation of the deferral loss; the fairness
/// regularizer is either soft DI of the mixture probability or the
/// expected squared DI, per di_form.
double loss_defer(const Vector& y, const IntVector& a, const Vector& y_model,
                  const Vector& y_dm, const Vector& gate, double gamma_defer,
                  double alpha_fair, LossSpec::DiForm di_form);

/// One-score two-threshold ordinal head:
/// P = sigmoid(x - t1), I = sigmoid(x - t0) - sigmoid(x - t1),
/// N = 1 - sigmoid(x - t0), p = P / (P + N). Requires t0 <= t1.
OrdinalOutput ordinal_outputs(double score, double t0, double t1);

/// -sum[Y log P + (1-Y) log N - gamma log I], with P, N, I clamped.
double loss_punt(const Vector& y, const std::vector<OrdinalOutput>& outs,
                 double gamma);

/// loss_punt plus alpha * (DI_reg of P + DI_reg of N), the two
/// components regularized separately.
double loss_fair_punt(const Vector& y, const IntVector& a,
                      const std::vector<OrdinalOutput>& outs, double gamma,
                      double alpha_fair);

/// Binary Concrete relaxation of s ~ Ber(pi):
/// s = sigmoid((logit(pi) + logit(u)) / temperature).
double concrete_sample(double pi, double temperature, double uniform_noise);

// ---- gradient helpers (probability space), used by the network
// backprop and by the gradient-decomposition tests ----

/// Soft DI value plus d(DI)/dp. Throws when a cell is empty.
double soft_di_grad(const Vector& y, const IntVector& a, const Vector& p,
                    Vector& d_p);

/// Weighted soft DI (predicted-mass weights) with gradients w.r.t.
/// p and the weights.
double weighted_soft_di_grad(const Vector& y, const IntVector& a,
                             const Vector& p, const Vector& w, Vector& d_p,
                             Vector& d_w);

/// Expected squared DI with gradients w.r.t. y_model and gate
/// (y_dm is a training input, not a parameter).
double expected_squared_di_grad(const Vector& y, const IntVector& a,
                                const Vector& y_model, const Vector& y_dm,
                                const Vector& gate, Vector& d_model,
                                Vector& d_gate);

}  // namespace fairdefer
