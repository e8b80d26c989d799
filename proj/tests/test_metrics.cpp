#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "fairdefer/metrics.hpp"
#include "test_util.hpp"

using namespace fairdefer;
using test_util::random_instance;
using test_util::random_probs;

namespace {

// Independent counting oracle for hard DI: literal conditional
// frequencies, no shared code with the implementation.
std::optional<DiComponents> brute_hard_di(const Vector& y, const IntVector& a,
                                          const Vector& y_hat) {
  double cnt[2][2] = {};   // [a][y]
  double fire[2][2] = {};  // prediction disagreeing with y
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    int pred = y_hat[i] >= 0.5 ? 1 : 0;
    int yi = static_cast<int>(y[i]);
    cnt[a[i]][yi] += 1.0;
    if (yi == 0 && pred == 1) fire[a[i]][0] += 1.0;
    if (yi == 1 && pred == 0) fire[a[i]][1] += 1.0;
  }
  for (int g = 0; g < 2; ++g)
    for (int v = 0; v < 2; ++v)
      if (cnt[g][v] == 0.0) return std::nullopt;
  DiComponents di;
  di.fp = std::abs(fire[0][0] / cnt[0][0] - fire[1][0] / cnt[1][0]);
  di.fn = std::abs(fire[0][1] / cnt[0][1] - fire[1][1] / cnt[1][1]);
  di.di = 0.5 * (di.fp + di.fn);
  return di;
}

// O(n^2) dominance oracle for the Pareto front.
std::vector<int> brute_pareto(const std::vector<std::pair<double, double>>& pts) {
  std::vector<int> keep;
  std::vector<bool> duplicate_seen(pts.size(), false);
  for (size_t i = 0; i < pts.size(); ++i) {
    bool dominated = false;
    for (size_t j = 0; j < pts.size() && !dominated; ++j) {
      if (j == i) continue;
      bool le = pts[j].first <= pts[i].first && pts[j].second <= pts[i].second;
      bool strict = pts[j].first < pts[i].first || pts[j].second < pts[i].second;
      if (le && strict) dominated = true;
      if (pts[j] == pts[i] && j < i) dominated = true;  // keep first duplicate
    }
    if (!dominated) keep.push_back(static_cast<int>(i));
  }
  std::sort(keep.begin(), keep.end(), [&](int l, int r) {
    return pts[l].first < pts[r].first ||
           (pts[l].first == pts[r].first && l < r);
  });
  return keep;
}

}  // namespace

TEST_CASE("error_rate binarizes at 0.5 with ties predicting 1") {
  Vector y(4), p(4);
  y << 0, 1, 1, 0;
  p << 0.5, 0.5, 0.2, 0.1;  // ties at 0.5 count as a positive prediction
  CHECK(error_rate(y, p) == doctest::Approx(2.0 / 4.0));
  CHECK_THROWS_AS(error_rate(Vector(), Vector()), Error);
}

TEST_CASE("hard DI matches the counting oracle on random instances") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> coin(0, 1);
  for (int trial = 0; trial < 60; ++trial) {
    auto inst = random_instance(rng, 30);
    Vector pred(inst.n);
    for (int i = 0; i < inst.n; ++i) pred[i] = coin(rng);
    auto got = disparate_impact_hard(inst.y, inst.a, pred);
    auto want = brute_hard_di(inst.y, inst.a, pred);
    REQUIRE(got.has_value() == want.has_value());
    if (got) {
      CHECK(got->di == doctest::Approx(want->di).epsilon(1e-12));
      CHECK(got->fp == doctest::Approx(want->fp).epsilon(1e-12));
      CHECK(got->fn == doctest::Approx(want->fn).epsilon(1e-12));
    }
  }
}

TEST_CASE("hard DI is empty when a conditioning cell is empty") {
  Vector y(3), pred(3);
  IntVector a(3);
  y << 0, 0, 1;
  a << 0, 1, 0;  // no (A=1, Y=1) examples
  pred << 1, 0, 1;
  CHECK_FALSE(disparate_impact_hard(y, a, pred).has_value());
}

TEST_CASE("soft DI equals hard DI exactly on binary probabilities") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> coin(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    auto inst = random_instance(rng, 24);
    Vector pred(inst.n);
    for (int i = 0; i < inst.n; ++i) pred[i] = coin(rng);
    auto hard = disparate_impact_hard(inst.y, inst.a, pred);
    auto soft = disparate_impact_soft(inst.y, inst.a, pred);
    REQUIRE(hard);
    REQUIRE(soft);
    CHECK(soft->di == doctest::Approx(hard->di).epsilon(1e-12));
  }
}

TEST_CASE("soft DI oracle: conditional means computed by hand") {
  // Y=0 side: group0 mean p = (0.2+0.4)/2 = 0.3, group1 = 0.8
  // Y=1 side: group0 mean (1-p) = 0.3, group1 = 0.1
  Vector y(6), p(6);
  IntVector a(6);
  y << 0, 0, 0, 1, 1, 1;
  a << 0, 0, 1, 0, 1, 1;
  p << 0.2, 0.4, 0.8, 0.7, 0.9, 0.9;
  auto di = disparate_impact_soft(y, a, p);
  REQUIRE(di);
  CHECK(di->fp == doctest::Approx(0.5));
  CHECK(di->fn == doctest::Approx(0.2));
  CHECK(di->di == doctest::Approx(0.35));
}

TEST_CASE("weighted soft DI: zero-mass cells contribute zero difference") {
  Vector y(4), p(4), w(4);
  IntVector a(4);
  y << 0, 0, 1, 1;
  a << 0, 1, 0, 1;
  p << 0.3, 0.9, 0.8, 0.6;
  w << 1.0, 0.0, 1.0, 1.0;  // the (A=1,Y=0) cell has no weight mass
  auto di = disparate_impact_soft_weighted(y, a, p, w);
  CHECK(di.fp == doctest::Approx(0.0));
  CHECK(di.fn == doctest::Approx(std::abs((1.0 - 0.8) - (1.0 - 0.6))));
  // All weights equal reduces to the unweighted soft DI.
  w.setOnes();
  auto plain = disparate_impact_soft(y, a, p);
  auto weighted = disparate_impact_soft_weighted(y, a, p, w);
  REQUIRE(plain);
  CHECK(weighted.di == doctest::Approx(plain->di).epsilon(1e-12));
}

TEST_CASE("expected squared DI matches Monte Carlo within 3 SE") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int trial = 0; trial < 12; ++trial) {
    auto inst = random_instance(rng, 16);
    Vector y_model = random_probs(rng, inst.n);
    Vector y_dm = random_probs(rng, inst.n);
    Vector gate = random_probs(rng, inst.n);
    auto closed = expected_squared_di(inst.y, inst.a, y_model, y_dm, gate);
    REQUIRE(closed);
    const int draws = 40000;
    double sum = 0.0, sumsq = 0.0;
    for (int d = 0; d < draws; ++d) {
      Vector mix(inst.n);
      for (int i = 0; i < inst.n; ++i)
        mix[i] = unif(rng) < gate[i] ? y_dm[i] : y_model[i];
      auto sq = squared_soft_di(inst.y, inst.a, mix);
      REQUIRE(sq);
      sum += *sq;
      sumsq += *sq * *sq;
    }
    double mean = sum / draws;
    double var = std::max(sumsq / draws - mean * mean, 0.0);
    double se = std::sqrt(var / draws);
    CHECK(std::abs(*closed - mean) < 3.0 * se + 1e-12);
  }
}

TEST_CASE("pareto front matches the O(n^2) dominance oracle") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::uniform_int_distribution<int> size(1, 60);
  for (int trial = 0; trial < 50; ++trial) {
    int n = size(rng);
    std::vector<std::pair<double, double>> pts;
    for (int i = 0; i < n; ++i) {
      // quantized coordinates so duplicates and ties actually occur
      pts.emplace_back(std::round(unif(rng) * 8) / 8.0,
                       std::round(unif(rng) * 8) / 8.0);
    }
    CHECK(pareto_front(pts) == brute_pareto(pts));
  }
  // and one larger instance
  std::vector<std::pair<double, double>> big;
  for (int i = 0; i < 500; ++i) big.emplace_back(unif(rng), unif(rng));
  CHECK(pareto_front(big) == brute_pareto(big));
}

TEST_CASE("deferral rates per group, empty group tagged") {
  IntVector s(5), a(5);
  s << 1, 0, 1, 1, 0;
  a << 0, 0, 1, 1, 1;
  auto rates = deferral_rates(s, a);
  CHECK(rates.overall == doctest::Approx(3.0 / 5.0));
  CHECK(rates.group0.value() == doctest::Approx(0.5));
  CHECK(rates.group1.value() == doctest::Approx(2.0 / 3.0));
  IntVector a_all(5);
  a_all.setZero();
  CHECK_FALSE(deferral_rates(s, a_all).group1.has_value());
}

TEST_CASE("minimum subgroup accuracy against a counting oracle") {
  std::mt19937_64 rng(41);
  std::uniform_int_distribution<int> coin(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    auto inst = random_instance(rng, 40);
    IntVector aux(inst.n);
    Vector pred(inst.n);
    for (int i = 0; i < inst.n; ++i) {
      aux[i] = coin(rng);
      pred[i] = coin(rng);
    }
    auto got = min_subgroup_accuracy(inst.y, pred, inst.a, aux);
    double best = 2.0;
    bool all_present = true;
    for (int av : {0, 1})
      for (int xv : {0, 1}) {
        int total = 0, correct = 0;
        for (int i = 0; i < inst.n; ++i) {
          if (inst.a[i] != av || aux[i] != xv) continue;
          ++total;
          if ((pred[i] >= 0.5 ? 1 : 0) == static_cast<int>(inst.y[i])) ++correct;
        }
        if (total == 0)
          all_present = false;
        else
          best = std::min(best, static_cast<double>(correct) / total);
      }
    REQUIRE(got.has_value() == all_present);
    if (got) CHECK(*got == doctest::Approx(best).epsilon(1e-12));
  }
}
