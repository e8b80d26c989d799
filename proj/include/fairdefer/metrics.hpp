#pragma once

#include <map>
#include <optional>
#include <utility>

#include "fairdefer/types.hpp"

namespace fairdefer {

/// Disparate impact split into its false-positive (Y=0) and
/// false-negative (Y=1) components; di = (fp + fn) / 2.
struct DiComponents {
  double di = 0.0;
  double fp = 0.0;  // DI_{Y=0}
  double fn = 0.0;  // DI_{Y=1}
};

/// Overall and per-sensitive-group deferral rates. A group with no
/// members yields an empty optional rather than a silent zero.
struct DeferralRates {
  double overall = 0.0;
  std::optional<double> group0;
  std::optional<double> group1;
};

struct MetricsRecord {
  double error_rate = 0.0;
  double di = 0.0;
  double di_fp_component = 0.0;
  double di_fn_component = 0.0;
  bool di_defined = true;
  double deferral_rate = 0.0;
  double per_group_deferral0 = 0.0;
  double per_group_deferral1 = 0.0;
  // keyed by (sensitive value, auxiliary group value)
  std::map<std::pair<int, int>, double> subgroup_accuracy;
  double min_subgroup_accuracy = 1.0;
  bool msa_defined = false;
};

/// Fraction of mismatches after binarizing predictions at 0.5
/// (ties predict 1). Throws on empty input.
double error_rate(const Vector& y, const Vector& y_hat);

inline int binarize(double p) { return p >= 0.5 ? 1 : 0; }

/// Hard DI over binary predictions. Empty when any conditioning cell
/// (A,Y) used by a component has no members.
std::optional<DiComponents> disparate_impact_hard(const Vector& y,
                                                  const IntVector& a,
                                                  const Vector& y_hat);

/// Continuous relaxation: indicator rates replaced by conditional means
/// of p (Y=0 side) and 1-p (Y=1 side). Equals the hard version exactly
/// when p is binary.
std::optional<DiComponents> disparate_impact_soft(const Vector& y,
                                                  const IntVector& a,
                                                  const Vector& p);

/// Soft DI with weighted conditional means, Sum(w_i p_i)/Sum(w_i) per
/// cell. A cell whose weight mass is zero contributes zero difference.
/// Used by the rejection loss, which regularizes only predicted examples.
DiComponents disparate_impact_soft_weighted(const Vector& y,
                                            const IntVector& a,
                                            const Vector& p,
                                            const Vector& weights);

/// Squared-component soft DI: (d0^2 + d1^2) / 2 over the conditional
/// mean differences of disparate_impact_soft.
std::optional<double> squared_soft_di(const Vector& y, const IntVector& a,
                                      const Vector& p);

/// Closed-form expectation over s_i ~ Ber(pi_i), independent, of the
/// squared-component DI of the mixture Yhat = s*y_dm + (1-s)*y_model.
std::optional<double> expected_squared_di(const Vector& y, const IntVector& a,
                                          const Vector& y_model,
                                          const Vector& y_dm,
                                          const Vector& gate);

DeferralRates deferral_rates(const IntVector& s, const IntVector& a);

/// Minimum accuracy over the four subgroups crossing binary A with a
/// binary auxiliary attribute. Empty when any subgroup is empty.
std::optional<double> min_subgroup_accuracy(const Vector& y,
                                            const Vector& y_hat,
                                            const IntVector& a,
                                            const IntVector& aux_group);

/// Indices of the (error, di) points kept on the Pareto front: a point
/// survives iff no other point is <= in both coordinates with at least
/// one strict. Exact duplicates keep one representative. Output sorted
/// by error ascending.
std::vector<int> pareto_front(const std::vector<std::pair<double, double>>& points);

}  // namespace fairdefer
