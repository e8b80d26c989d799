#pragma once

#include <vector>

#include "fairdefer/types.hpp"

namespace fairdefer {

enum class ThresholdDecision { predict0, pass, predict1 };

/// Band rule on a probability score beta: beta <= t0 predicts 0,
/// beta >= t1 predicts 1, strictly inside the band passes. A
/// single-band set applies to every group; a per-group set requires
/// the group index to be in range.
ThresholdDecision apply_thresholds(double score, const ThresholdSet& thresholds,
                                   int group);

std::vector<ThresholdDecision> apply_thresholds(const Vector& scores,
                                                const ThresholdSet& thresholds,
                                                const IntVector& groups);

struct ThresholdSearchConfig {
  int n_samples = 1000;
  bool per_group = true;
  double gamma = 0.0;  // deferral-rate penalty
  double alpha = 0.0;  // hard-DI penalty
  uint64_t seed = 0;

  void validate() const;
};

/// Post-hoc hard-threshold search: samples threshold combinations with
/// lower candidates drawn from the selection-split scores below 0.5 and
/// upper candidates from the scores above 0.5 (so 0.5 always sits in
/// the PASS band), independently per group when per_group is on, and
/// returns the combination minimizing
///   error + gamma * deferral + alpha * hard DI
/// of the composed system on the selection split, with passed examples
/// decided by the DM's hard prediction. When one side of 0.5 holds no
/// scores, candidates for that threshold fall back to the full score
/// distribution.
ThresholdSet posthoc_threshold_search(const Vector& scores, const Vector& y,
                                      const IntVector& a, const Vector& y_dm,
                                      const ThresholdSearchConfig& config);

}  // namespace fairdefer
