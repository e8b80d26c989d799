#include "fairdefer/thresholds.hpp"

#include <algorithm>
#include <limits>
#include <random>

#include "fairdefer/metrics.hpp"

namespace fairdefer {

ThresholdDecision apply_thresholds(double score, const ThresholdSet& thresholds,
                                   int group) {
  thresholds.validate();
  require(group >= 0, "apply_thresholds: negative group");
  const ThresholdSet::Band* band;
  if (thresholds.groups.size() == 1) {
    band = &thresholds.groups[0];
  } else {
    require(static_cast<size_t>(group) < thresholds.groups.size(),
            "apply_thresholds: unknown group");
    band = &thresholds.groups[group];
  }
  if (score <= band->t0) return ThresholdDecision::predict0;
  if (score >= band->t1) return ThresholdDecision::predict1;
  return ThresholdDecision::pass;
}

std::vector<ThresholdDecision> apply_thresholds(const Vector& scores,
                                                const ThresholdSet& thresholds,
                                                const IntVector& groups) {
  require(scores.size() == groups.size(),
          "apply_thresholds: scores/groups length mismatch");
  std::vector<ThresholdDecision> out(scores.size());
  for (Eigen::Index i = 0; i < scores.size(); ++i)
    out[i] = apply_thresholds(scores[i], thresholds, groups[i]);
  return out;
}

void ThresholdSearchConfig::validate() const {
  require(n_samples >= 1, "ThresholdSearchConfig: n_samples must be >= 1");
  require(gamma >= 0.0, "ThresholdSearchConfig: gamma must be >= 0");
}

namespace {

// Candidate pools for one group: values below / above 0.5, each falling
// back to the full distribution when its side is empty.
struct CandidatePools {
  std::vector<double> lower;
  std::vector<double> upper;
};

CandidatePools make_pools(const std::vector<double>& scores) {
  CandidatePools pools;
  for (double s : scores)
    (s < 0.5 ? pools.lower : pools.upper).push_back(s);
  if (pools.lower.empty()) pools.lower = scores;
  if (pools.upper.empty()) pools.upper = scores;
  return pools;
}

double search_objective(const Vector& scores, const Vector& y,
                        const IntVector& a, const Vector& y_dm,
                        const ThresholdSet& ts,
                        const ThresholdSearchConfig& config) {
  Eigen::Index n = scores.size();
  Vector y_system(n);
  int deferred = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    switch (apply_thresholds(scores[i], ts, a[i])) {
      case ThresholdDecision::predict0: y_system[i] = 0.0; break;
      case ThresholdDecision::predict1: y_system[i] = 1.0; break;
      case ThresholdDecision::pass:
        y_system[i] = binarize(y_dm[i]);
        ++deferred;
        break;
    }
  }
  double obj = error_rate(y, y_system) +
               config.gamma * static_cast<double>(deferred) / n;
  if (config.alpha != 0.0) {
    auto di = disparate_impact_hard(y, a, y_system);
    if (di) obj += config.alpha * di->di;
  }
  return obj;
}

}  // namespace

ThresholdSet posthoc_threshold_search(const Vector& scores, const Vector& y,
                                      const IntVector& a, const Vector& y_dm,
                                      const ThresholdSearchConfig& config) {
  config.validate();
  Eigen::Index n = scores.size();
  require(n > 0, "posthoc_threshold_search: empty selection split");
  require(y.size() == n && a.size() == n && y_dm.size() == n,
          "posthoc_threshold_search: input length mismatch");

  int n_groups = config.per_group ? 2 : 1;
  std::vector<std::vector<double>> group_scores(n_groups);
  for (Eigen::Index i = 0; i < n; ++i) {
    require(a[i] == 0 || a[i] == 1,
            "posthoc_threshold_search: sensitive attribute must be binary");
    group_scores[config.per_group ? a[i] : 0].push_back(scores[i]);
  }
  std::vector<double> all_scores(scores.data(), scores.data() + n);
  std::vector<CandidatePools> pools(n_groups);
  for (int g = 0; g < n_groups; ++g)
    pools[g] = make_pools(group_scores[g].empty() ? all_scores : group_scores[g]);

  std::mt19937_64 rng(config.seed);
  ThresholdSet best;
  double best_obj = std::numeric_limits<double>::infinity();
  for (int trial = 0; trial < config.n_samples; ++trial) {
    ThresholdSet candidate;
    bool ordered = true;
    for (int g = 0; g < n_groups; ++g) {
      std::uniform_int_distribution<size_t> lo(0, pools[g].lower.size() - 1);
      std::uniform_int_distribution<size_t> hi(0, pools[g].upper.size() - 1);
      double t0 = pools[g].lower[lo(rng)];
      double t1 = pools[g].upper[hi(rng)];
      if (t0 > t1) ordered = false;  // fallback pools can cross; skip the draw
      candidate.groups.push_back({t0, t1});
    }
    if (!ordered) continue;
    double obj = search_objective(scores, y, a, y_dm, candidate, config);
    if (obj < best_obj) {
      best_obj = obj;
      best = candidate;
    }
  }
  require(!best.groups.empty(),
          "posthoc_threshold_search: no ordered threshold combination found");
  return best;
}

}  // namespace fairdefer
