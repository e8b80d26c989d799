#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "fairdefer/losses.hpp"
#include "test_util.hpp"

using namespace fairdefer;
using test_util::random_instance;
using test_util::random_probs;

TEST_CASE("log_lik is clamped and bounded above by zero") {
  CHECK(log_lik(1.0, 0.9) == doctest::Approx(std::log(0.9)));
  CHECK(log_lik(0.0, 0.9) == doctest::Approx(std::log(0.1)));
  CHECK(log_lik(1.0, 0.0) == doctest::Approx(std::log(kProbFloor)));
  CHECK(log_lik(0.0, 1.0) == doctest::Approx(std::log(kProbFloor)));
  CHECK(log_lik(1.0, 1.0) <= 0.0);
}

TEST_CASE("loss_reject closed form equals its Monte Carlo expectation") {
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    auto inst = random_instance(rng, 12);
    Vector p = random_probs(rng, inst.n);
    Vector gate = random_probs(rng, inst.n);
    double gamma = unif(rng);
    // alpha = 0: the regularizer is not an expectation over s, so the
    // sampling oracle covers the likelihood part.
    double closed = loss_reject(inst.y, inst.a, p, gate, gamma, 0.0);
    const int draws = 20000;
    double sum = 0.0, sumsq = 0.0;
    for (int d = 0; d < draws; ++d) {
      double l = 0.0;
      for (int i = 0; i < inst.n; ++i) {
        if (unif(rng) < gate[i])
          l += -gamma;
        else
          l += -log_lik(inst.y[i], p[i]);
      }
      sum += l;
      sumsq += l * l;
    }
    double mean = sum / draws;
    double se = std::sqrt(std::max(sumsq / draws - mean * mean, 0.0) / draws);
    CHECK(std::abs(closed - mean) < 3.0 * se + 1e-9);
  }
}

TEST_CASE("loss_defer closed form equals its Monte Carlo expectation") {
  std::mt19937_64 rng(103);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    auto inst = random_instance(rng, 12);
    Vector p = random_probs(rng, inst.n);
    Vector dm = random_probs(rng, inst.n);
    Vector gate = random_probs(rng, inst.n);
    double gamma = unif(rng);
    double closed = loss_defer(inst.y, inst.a, p, dm, gate, gamma, 0.0,
                               LossSpec::DiForm::soft_mean);
    const int draws = 20000;
    double sum = 0.0, sumsq = 0.0;
    for (int d = 0; d < draws; ++d) {
      double l = 0.0;
      for (int i = 0; i < inst.n; ++i) {
        if (unif(rng) < gate[i])
          l += -log_lik(inst.y[i], dm[i]) - gamma;
        else
          l += -log_lik(inst.y[i], p[i]);
      }
      sum += l;
      sumsq += l * l;
    }
    double mean = sum / draws;
    double se = std::sqrt(std::max(sumsq / draws - mean * mean, 0.0) / draws);
    CHECK(std::abs(closed - mean) < 3.0 * se + 1e-9);
  }
}

TEST_CASE("defer/reject theorem: equality at gamma_defer = gamma_reject - alpha") {
  std::mt19937_64 rng(107);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::uniform_real_distribution<double> alpha_dist(-2.0, 0.0);
  for (int trial = 0; trial < 100; ++trial) {
    auto inst = random_instance(rng, 20);
    Vector p = random_probs(rng, inst.n);
    Vector gate = random_probs(rng, inst.n);
    double alpha = alpha_dist(rng);
    double gamma_reject = unif(rng) * 2.0;
    double gamma_defer = gamma_reject - alpha;
    // Constant-loss DM: log_lik(Y, y_dm) = alpha for every example.
    double e = std::exp(alpha);
    Vector dm(inst.n);
    for (int i = 0; i < inst.n; ++i)
      dm[i] = inst.y[i] * e + (1.0 - inst.y[i]) * (1.0 - e);
    double lr = loss_reject(inst.y, inst.a, p, gate, gamma_reject, 0.0);
    double ld = loss_defer(inst.y, inst.a, p, dm, gate, gamma_defer, 0.0,
                           LossSpec::DiForm::soft_mean);
    CHECK(std::abs(lr - ld) < 1e-9);
  }
}

TEST_CASE("ordinal outputs form a simplex for random scores and thresholds") {
  std::mt19937_64 rng(109);
  std::uniform_real_distribution<double> score_dist(-10.0, 10.0);
  std::uniform_real_distribution<double> gap(0.0, 5.0);
  for (int trial = 0; trial < 10000; ++trial) {
    double t0 = score_dist(rng);
    double t1 = t0 + gap(rng);
    auto out = ordinal_outputs(score_dist(rng), t0, t1);
    CHECK(out.positive >= 0.0);
    CHECK(out.pass >= 0.0);
    CHECK(out.negative >= 0.0);
    CHECK(out.positive + out.pass + out.negative == doctest::Approx(1.0));
    CHECK(out.prediction ==
          doctest::Approx(out.positive / (out.positive + out.negative)));
  }
  CHECK_THROWS_AS(ordinal_outputs(0.0, 1.0, 0.0), Error);
}

TEST_CASE("loss_punt: hand-computed value and gamma sensitivity") {
  Vector y(2);
  y << 1, 0;
  std::vector<OrdinalOutput> outs = {ordinal_outputs(1.0, -1.0, 0.5),
                                     ordinal_outputs(-2.0, -1.0, 0.5)};
  double gamma = 0.7;
  double expected = 0.0;
  double log_i_sum = 0.0;
  for (int i = 0; i < 2; ++i) {
    expected += -y[i] * std::log(outs[i].positive) -
                (1.0 - y[i]) * std::log(outs[i].negative) +
                gamma * std::log(outs[i].pass);
    log_i_sum += std::log(outs[i].pass);
  }
  CHECK(loss_punt(y, outs, gamma) == doctest::Approx(expected));
  // The IDK term enters as +gamma * log I with log I < 0, so the loss
  // is strictly decreasing in gamma: a larger reward makes punting cheaper.
  double d_gamma = (loss_punt(y, outs, gamma + 1e-6) -
                    loss_punt(y, outs, gamma - 1e-6)) /
                   2e-6;
  CHECK(d_gamma == doctest::Approx(log_i_sum).epsilon(1e-6));
  CHECK(d_gamma < 0.0);
}

TEST_CASE("loss_fair_punt adds the P and N regularizers") {
  std::mt19937_64 rng(113);
  auto inst = random_instance(rng, 10);
  std::uniform_real_distribution<double> score_dist(-2.0, 2.0);
  std::vector<OrdinalOutput> outs;
  Vector pos(inst.n), neg(inst.n);
  for (int i = 0; i < inst.n; ++i) {
    outs.push_back(ordinal_outputs(score_dist(rng), -0.5, 0.5));
    pos[i] = outs[i].positive;
    neg[i] = outs[i].negative;
  }
  auto di_p = disparate_impact_soft(inst.y, inst.a, pos);
  auto di_n = disparate_impact_soft(inst.y, inst.a, neg);
  REQUIRE(di_p);
  REQUIRE(di_n);
  double alpha = 0.8, gamma = 0.3;
  CHECK(loss_fair_punt(inst.y, inst.a, outs, gamma, alpha) ==
        doctest::Approx(loss_punt(inst.y, outs, gamma) +
                        alpha * (di_p->di + di_n->di)));
}

TEST_CASE("concrete relaxation: noise cancellation, hard limit, sampling mean") {
  // u = 0.5 contributes logit(0.5) = 0.
  CHECK(concrete_sample(0.7, 0.5, 0.5) ==
        doctest::Approx(sigmoid(logit(0.7) / 0.5)));
  // temperature -> 0+: hard threshold on logit(pi) + logit(u)
  CHECK(concrete_sample(0.7, 1e-6, 0.4) == doctest::Approx(1.0));
  CHECK(concrete_sample(0.2, 1e-6, 0.5) == doctest::Approx(0.0));
  CHECK_THROWS_AS(concrete_sample(0.5, 0.0, 0.5), Error);
  CHECK_THROWS_AS(concrete_sample(0.5, 0.5, 0.0), Error);
  // Hard-thresholded samples are Bernoulli(pi) regardless of temperature.
  std::mt19937_64 rng(127);
  std::uniform_real_distribution<double> unif(1e-12, 1.0 - 1e-12);
  for (double pi : {0.2, 0.5, 0.85}) {
    const int draws = 100000;
    int ones = 0;
    for (int d = 0; d < draws; ++d)
      if (concrete_sample(pi, 0.5, unif(rng)) > 0.5) ++ones;
    double se = std::sqrt(pi * (1.0 - pi) / draws);
    CHECK(std::abs(static_cast<double>(ones) / draws - pi) < 3.0 * se + 1e-3);
  }
}

TEST_CASE("probability-space DI gradients match finite differences") {
  std::mt19937_64 rng(131);
  const double h = 1e-7;
  for (int trial = 0; trial < 20; ++trial) {
    auto inst = random_instance(rng, 14);
    Vector p = random_probs(rng, inst.n);

    {
      Vector d_p;
      soft_di_grad(inst.y, inst.a, p, d_p);
      for (int i = 0; i < inst.n; ++i) {
        Vector up = p, down = p;
        up[i] += h;
        down[i] -= h;
        Vector dummy;
        double fd = (soft_di_grad(inst.y, inst.a, up, dummy) -
                     soft_di_grad(inst.y, inst.a, down, dummy)) /
                    (2.0 * h);
        CHECK(d_p[i] == doctest::Approx(fd).epsilon(1e-4));
      }
    }
    {
      Vector w = random_probs(rng, inst.n, 0.1, 1.0);
      Vector d_p, d_w, dummy_p, dummy_w;
      weighted_soft_di_grad(inst.y, inst.a, p, w, d_p, d_w);
      for (int i = 0; i < inst.n; ++i) {
        Vector up = p, down = p;
        up[i] += h;
        down[i] -= h;
        double fd_p = (weighted_soft_di_grad(inst.y, inst.a, up, w, dummy_p,
                                             dummy_w) -
                       weighted_soft_di_grad(inst.y, inst.a, down, w, dummy_p,
                                             dummy_w)) /
                      (2.0 * h);
        CHECK(d_p[i] == doctest::Approx(fd_p).epsilon(1e-4));
        Vector wu = w, wd = w;
        wu[i] += h;
        wd[i] -= h;
        double fd_w = (weighted_soft_di_grad(inst.y, inst.a, p, wu, dummy_p,
                                             dummy_w) -
                       weighted_soft_di_grad(inst.y, inst.a, p, wd, dummy_p,
                                             dummy_w)) /
                      (2.0 * h);
        CHECK(d_w[i] == doctest::Approx(fd_w).epsilon(1e-4));
      }
    }
    {
      Vector dm = random_probs(rng, inst.n);
      Vector gate = random_probs(rng, inst.n);
      Vector d_model, d_gate, dummy_m, dummy_g;
      expected_squared_di_grad(inst.y, inst.a, p, dm, gate, d_model, d_gate);
      for (int i = 0; i < inst.n; ++i) {
        Vector up = p, down = p;
        up[i] += h;
        down[i] -= h;
        double fd_m = (expected_squared_di_grad(inst.y, inst.a, up, dm, gate,
                                                dummy_m, dummy_g) -
                       expected_squared_di_grad(inst.y, inst.a, down, dm, gate,
                                                dummy_m, dummy_g)) /
                      (2.0 * h);
        CHECK(d_model[i] == doctest::Approx(fd_m).epsilon(1e-4));
        Vector gu = gate, gd = gate;
        gu[i] += h;
        gd[i] -= h;
        double fd_g = (expected_squared_di_grad(inst.y, inst.a, p, dm, gu,
                                                dummy_m, dummy_g) -
                       expected_squared_di_grad(inst.y, inst.a, p, dm, gd,
                                                dummy_m, dummy_g)) /
                      (2.0 * h);
        CHECK(d_gate[i] == doctest::Approx(fd_g).epsilon(1e-4));
      }
    }
  }
}
