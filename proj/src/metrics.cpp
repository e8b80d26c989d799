#include "fairdefer/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace fairdefer {

namespace {

void check_binary(const Vector& v, const char* name) {
  for (Eigen::Index i = 0; i < v.size(); ++i)
    require(v[i] == 0.0 || v[i] == 1.0,
            std::string(name) + " must be strictly in {0,1}");
}

void check_lengths(Eigen::Index n, Eigen::Index m, const char* what) {
  require(n == m, std::string("length mismatch in ") + what);
  require(n > 0, std::string("empty input in ") + what);
}

// Conditional mean of v over the cell (A=a, Y=y_val). Returns count 0
// when the cell is empty.
struct CellMean {
  double mean = 0.0;
  int count = 0;
};

CellMean cell_mean(const Vector& y, const IntVector& a, const Vector& v,
                   int a_val, double y_val) {
  double sum = 0.0;
  int count = 0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (a[i] == a_val && y[i] == y_val) {
      sum += v[i];
      ++count;
    }
  }
  return {count > 0 ? sum / count : 0.0, count};
}

// The four (A, Y) conditional mean differences underlying all DI
// variants: d0 over p for Y=0, d1 over 1-p for Y=1.
struct MeanDiffs {
  double d0 = 0.0;
  double d1 = 0.0;
  bool defined = false;
};

MeanDiffs soft_mean_diffs(const Vector& y, const IntVector& a, const Vector& p) {
  check_lengths(y.size(), a.size(), "disparate impact");
  check_lengths(y.size(), p.size(), "disparate impact");
  check_binary(y, "Y");
  CellMean m00 = cell_mean(y, a, p, 0, 0.0);
  CellMean m01 = cell_mean(y, a, p, 1, 0.0);
  CellMean m10 = cell_mean(y, a, p, 0, 1.0);
  CellMean m11 = cell_mean(y, a, p, 1, 1.0);
  if (m00.count == 0 || m01.count == 0 || m10.count == 0 || m11.count == 0)
    return {};
  MeanDiffs d;
  d.d0 = m00.mean - m01.mean;
  d.d1 = (1.0 - m10.mean) - (1.0 - m11.mean);
  d.defined = true;
  return d;
}

}  // namespace

double error_rate(const Vector& y, const Vector& y_hat) {
  check_lengths(y.size(), y_hat.size(), "error_rate");
  check_binary(y, "Y");
  Eigen::Index wrong = 0;
  for (Eigen::Index i = 0; i < y.size(); ++i)
    if (binarize(y_hat[i]) != static_cast<int>(y[i])) ++wrong;
  return static_cast<double>(wrong) / static_cast<double>(y.size());
}

std::optional<DiComponents> disparate_impact_hard(const Vector& y,
                                                  const IntVector& a,
                                                  const Vector& y_hat) {
  check_binary(y_hat, "Yhat");
  return disparate_impact_soft(y, a, y_hat);
}

std::optional<DiComponents> disparate_impact_soft(const Vector& y,
                                                  const IntVector& a,
                                                  const Vector& p) {
  MeanDiffs d = soft_mean_diffs(y, a, p);
  if (!d.defined) return std::nullopt;
  DiComponents out;
  out.fp = std::abs(d.d0);
  out.fn = std::abs(d.d1);
  out.di = 0.5 * (out.fp + out.fn);
  return out;
}

DiComponents disparate_impact_soft_weighted(const Vector& y, const IntVector& a,
                                            const Vector& p,
                                            const Vector& weights) {
  check_lengths(y.size(), a.size(), "weighted DI");
  check_lengths(y.size(), p.size(), "weighted DI");
  check_lengths(y.size(), weights.size(), "weighted DI");
  check_binary(y, "Y");
  std::array<double, 4> num{}, den{};  // cell index = a + 2*y
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    int cell = a[i] + 2 * static_cast<int>(y[i]);
    double v = y[i] == 1.0 ? 1.0 - p[i] : p[i];
    num[cell] += weights[i] * v;
    den[cell] += weights[i];
  }
  auto rate = [&](int cell) { return den[cell] > 0.0 ? num[cell] / den[cell] : 0.0; };
  DiComponents out;
  // A cell with zero weight mass has no predicted examples; its rate
  // is taken as the other group's, zeroing the component.
  double r00 = rate(0), r01 = rate(1), r10 = rate(2), r11 = rate(3);
  if (den[0] == 0.0) r00 = r01;
  if (den[1] == 0.0) r01 = r00;
  if (den[2] == 0.0) r10 = r11;
  if (den[3] == 0.0) r11 = r10;
  out.fp = std::abs(r00 - r01);
  out.fn = std::abs(r10 - r11);
  out.di = 0.5 * (out.fp + out.fn);
  return out;
}

std::optional<double> squared_soft_di(const Vector& y, const IntVector& a,
                                      const Vector& p) {
  MeanDiffs d = soft_mean_diffs(y, a, p);
  if (!d.defined) return std::nullopt;
  return 0.5 * (d.d0 * d.d0 + d.d1 * d.d1);
}

std::optional<double> expected_squared_di(const Vector& y, const IntVector& a,
                                          const Vector& y_model,
                                          const Vector& y_dm,
                                          const Vector& gate) {
  check_lengths(y.size(), y_model.size(), "expected_squared_di");
  check_lengths(y.size(), y_dm.size(), "expected_squared_di");
  check_lengths(y.size(), gate.size(), "expected_squared_di");
  // Per-example mixture mean and variance under independent s_i ~ Ber(pi_i):
  //   mu_i  = pi*y_dm + (1-pi)*y_model
  //   var_i = pi*(1-pi)*(y_dm - y_model)^2
  Vector mu(y.size());
  Vector var(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    require(gate[i] >= 0.0 && gate[i] <= 1.0, "gate outside [0,1]");
    mu[i] = gate[i] * y_dm[i] + (1.0 - gate[i]) * y_model[i];
    double diff = y_dm[i] - y_model[i];
    var[i] = gate[i] * (1.0 - gate[i]) * diff * diff;
  }
  MeanDiffs d = soft_mean_diffs(y, a, mu);
  if (!d.defined) return std::nullopt;
  // E[(m_g0 - m_g1)^2] = (E diff)^2 + Var(m_g0) + Var(m_g1); the cell
  // means are independent averages so Var(m) = sum(var_i)/n^2. The Y=1
  // side uses 1 - Yhat, which leaves variances unchanged.
  std::array<double, 4> var_sum{};
  std::array<int, 4> count{};
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    int cell = a[i] + 2 * static_cast<int>(y[i]);
    var_sum[cell] += var[i];
    ++count[cell];
  }
  auto mean_var = [&](int cell) {
    return var_sum[cell] / (static_cast<double>(count[cell]) * count[cell]);
  };
  double e0 = d.d0 * d.d0 + mean_var(0) + mean_var(1);
  double e1 = d.d1 * d.d1 + mean_var(2) + mean_var(3);
  return 0.5 * (e0 + e1);
}

DeferralRates deferral_rates(const IntVector& s, const IntVector& a) {
  check_lengths(s.size(), a.size(), "deferral_rates");
  DeferralRates out;
  double sum = 0.0;
  std::array<double, 2> gsum{};
  std::array<int, 2> gcount{};
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    require(s[i] == 0 || s[i] == 1, "s must be binary");
    require(a[i] == 0 || a[i] == 1, "A must be binary");
    sum += s[i];
    gsum[a[i]] += s[i];
    ++gcount[a[i]];
  }
  out.overall = sum / static_cast<double>(s.size());
  if (gcount[0] > 0) out.group0 = gsum[0] / gcount[0];
  if (gcount[1] > 0) out.group1 = gsum[1] / gcount[1];
  return out;
}

std::optional<double> min_subgroup_accuracy(const Vector& y, const Vector& y_hat,
                                            const IntVector& a,
                                            const IntVector& aux_group) {
  check_lengths(y.size(), y_hat.size(), "min_subgroup_accuracy");
  check_lengths(y.size(), a.size(), "min_subgroup_accuracy");
  check_lengths(y.size(), aux_group.size(), "min_subgroup_accuracy");
  std::array<int, 4> correct{}, count{};
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    int cell = a[i] + 2 * aux_group[i];
    ++count[cell];
    if (binarize(y_hat[i]) == static_cast<int>(y[i])) ++correct[cell];
  }
  double min_acc = 1.0;
  for (int cell = 0; cell < 4; ++cell) {
    if (count[cell] == 0) return std::nullopt;
    min_acc = std::min(min_acc, static_cast<double>(correct[cell]) / count[cell]);
  }
  return min_acc;
}

std::vector<int> pareto_front(const std::vector<std::pair<double, double>>& points) {
  std::vector<int> order(points.size());
  for (size_t i = 0; i < points.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(), [&](int i, int j) {
    return points[i].first < points[j].first;
  });
  std::vector<int> front;
  for (int i : order) {
    bool dominated = false;
    for (size_t j = 0; j < points.size(); ++j) {
      if (static_cast<int>(j) == i) continue;
      const auto& p = points[i];
      const auto& q = points[j];
      bool leq = q.first <= p.first && q.second <= p.second;
      bool strict = q.first < p.first || q.second < p.second;
      if (leq && strict) {
        dominated = true;
        break;
      }
      if (q == p && static_cast<int>(j) < i) {
        dominated = true;  // duplicate: earlier index is the representative
        break;
      }
    }
    if (!dominated) front.push_back(i);
  }
  return front;
}

}  // namespace fairdefer
