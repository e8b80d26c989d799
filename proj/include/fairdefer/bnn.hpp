#pragma once

#include "fairdefer/data.hpp"
#include "fairdefer/nn.hpp"

namespace fairdefer {

struct BnnConfig {
  int hidden_units = 5;
  double prior_std = 0.1;
  int predict_samples = 10;  // J
  TrainConfig train;

  void validate() const;
};

/// Mean-field Gaussian posterior over the weights of a binary-head
/// network. Stds are parametrized as softplus(raw) so they stay
/// positive; `shape` carries the architecture and flat-vector layout.
struct BnnPosterior {
  ModelParams shape;  // parameter values unused; layout + dims only
  Vector mean;
  Vector raw_std;
  double prior_std = 0.1;

  Vector std_dev() const;
  void validate() const;
};

/// KL(q || prior) between the diagonal posterior and N(0, prior_std^2 I).
/// Zero exactly when the posterior equals the prior.
double bnn_kl(const Vector& mean, const Vector& std_dev, double prior_std);

/// Trains by maximizing the ELBO: minimizes NLL(sampled weights) + KL,
/// one reparameterized weight sample per step, ADAM with early stopping
/// on the validation objective at the posterior mean.
BnnPosterior bnn_train(const Dataset& data, const BnnConfig& config);

struct BnnPrediction {
  Vector mean;         // mu: sample mean of J output probabilities
  Vector std_dev;      // sigma: sample standard deviation
  Vector uncertainty;  // rho = sigmoid(log(1/S)), S = |mu - 0.5| / sigma
};

/// Draws J weight samples and scores each example. Edge cases:
/// sigma = 0 gives rho = 0 (fully confident); mu = 0.5 with sigma > 0
/// gives rho = 1 (maximal uncertainty).
BnnPrediction bnn_predict(const BnnPosterior& posterior, const Matrix& features,
                          int j_samples, uint64_t seed);

/// The uncertainty transform on its own, for the scoring oracle tests.
double bnn_uncertainty(double mu, double sigma);

}  // namespace fairdefer
