#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "fairdefer/bnn.hpp"
#include "fairdefer/metrics.hpp"
#include "test_util.hpp"

using namespace fairdefer;

TEST_CASE("KL divergence is zero at the prior and positive away from it") {
  const int np = 7;
  const double prior_std = 0.1;
  Vector mean = Vector::Zero(np);
  Vector sd = Vector::Constant(np, prior_std);
  CHECK(bnn_kl(mean, sd, prior_std) == doctest::Approx(0.0).epsilon(1e-14));
  mean[2] = 0.3;
  CHECK(bnn_kl(mean, sd, prior_std) > 0.0);
  mean[2] = 0.0;
  sd[4] = 0.25;
  CHECK(bnn_kl(mean, sd, prior_std) > 0.0);
  // single-dimension hand value: log(sp/s) + (s^2 + m^2)/(2 sp^2) - 1/2
  Vector m1(1), s1(1);
  m1 << 0.2;
  s1 << 0.05;
  double want = std::log(0.1 / 0.05) + (0.05 * 0.05 + 0.2 * 0.2) / (2 * 0.01) - 0.5;
  CHECK(bnn_kl(m1, s1, 0.1) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("uncertainty transform edge cases and monotonicity") {
  CHECK(bnn_uncertainty(0.9, 0.0) == doctest::Approx(0.0));
  CHECK(bnn_uncertainty(0.5, 0.0) == doctest::Approx(0.0));  // sigma=0 wins
  CHECK(bnn_uncertainty(0.5, 0.2) == doctest::Approx(1.0));
  // S = |mu - 0.5| / sigma = 0.4/0.4 = 1 -> rho = sigmoid(log 1) = 0.5
  CHECK(bnn_uncertainty(0.9, 0.4) == doctest::Approx(0.5).epsilon(1e-12));
  // rho = 1/(1+S): S = 2 -> 1/3
  CHECK(bnn_uncertainty(0.9, 0.2) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  // farther from 0.5 at fixed sigma means less uncertain
  CHECK(bnn_uncertainty(0.95, 0.1) < bnn_uncertainty(0.7, 0.1));
  // larger sigma at fixed mu means more uncertain
  CHECK(bnn_uncertainty(0.8, 0.3) > bnn_uncertainty(0.8, 0.1));
}

namespace {

Dataset separable(int n, uint64_t seed) {
  SynthSpec spec;
  spec.n = n;
  spec.gaussian_dims = 3;
  spec.class_separation = 3.0;
  return synth_generate(spec, seed);
}

}  // namespace

TEST_CASE("bnn_train learns a separable problem; predictions deterministic") {
  Dataset data = separable(300, 91);
  BnnConfig config;
  config.hidden_units = 4;
  config.prior_std = 0.5;  // wide enough that weight samples keep the signal
  config.train.seed = 6;
  config.train.max_epochs = 400;
  config.train.patience_epochs = 60;
  BnnPosterior post = bnn_train(data, config);
  CHECK(post.mean.size() == post.shape.flatten().size());
  CHECK((post.std_dev().array() > 0.0).all());

  BnnPrediction pred = bnn_predict(post, data.features, 10, 123);
  BnnPrediction again = bnn_predict(post, data.features, 10, 123);
  CHECK((pred.mean - again.mean).norm() == 0.0);
  CHECK((pred.std_dev - again.std_dev).norm() == 0.0);
  CHECK((pred.uncertainty - again.uncertainty).norm() == 0.0);
  BnnPrediction other = bnn_predict(post, data.features, 10, 124);
  CHECK((pred.mean - other.mean).norm() > 0.0);

  CHECK((pred.mean.array() >= 0.0).all());
  CHECK((pred.mean.array() <= 1.0).all());
  CHECK((pred.std_dev.array() >= 0.0).all());
  CHECK((pred.uncertainty.array() >= 0.0).all());
  CHECK((pred.uncertainty.array() <= 1.0).all());
  CHECK(error_rate(data.labels, pred.mean) < 0.2);
}

TEST_CASE("bnn_train is deterministic under the seed") {
  Dataset data = separable(150, 92);
  BnnConfig config;
  config.hidden_units = 3;
  config.train.seed = 8;
  config.train.max_epochs = 60;
  config.train.patience_epochs = 20;
  BnnPosterior a = bnn_train(data, config);
  BnnPosterior b = bnn_train(data, config);
  CHECK((a.mean - b.mean).norm() == 0.0);
  CHECK((a.raw_std - b.raw_std).norm() == 0.0);
}

TEST_CASE("prediction std uses the ddof-1 sample estimator") {
  // Collapse the posterior to (near) zero std: every weight draw is the
  // mean, so the J output samples coincide and sigma must be exactly 0.
  Dataset data = separable(60, 93);
  BnnConfig config;
  config.hidden_units = 3;
  config.train.seed = 4;
  config.train.max_epochs = 10;
  config.train.patience_epochs = 5;
  BnnPosterior post = bnn_train(data, config);
  post.raw_std.setConstant(-40.0);  // softplus(-40) ~ 4e-18, effectively 0
  BnnPrediction pred = bnn_predict(post, data.features, 7, 55);
  CHECK(pred.std_dev.norm() < 1e-12);
  CHECK((pred.uncertainty.array() < 1e-9).all());
}
