#include "fairdefer/losses.hpp"

#include <array>
#include <cmath>

namespace fairdefer {

void LossSpec::validate() const {
  require(temperature > 0.0, "LossSpec: temperature must be > 0");
  if (di_form == DiForm::squared_expected)
    require(kind == Kind::defer || kind == Kind::reject,
            "LossSpec: squared_expected DI requires kind defer or reject");
}

const char* LossSpec::kind_name(Kind k) {
  switch (k) {
    case Kind::fair_binary: return "fair_binary";
    case Kind::reject: return "reject";
    case Kind::defer: return "defer";
    case Kind::punt: return "punt";
    case Kind::fair_punt: return "fair_punt";
  }
  return "?";
}

double log_lik(double y, double p) {
  p = clamp_prob(p);
  return y * std::log(p) + (1.0 - y) * std::log1p(-p);
}

namespace {

void require_di_defined(const std::optional<DiComponents>& di) {
  require(di.has_value(),
          "disparate impact undefined: empty (A,Y) conditioning cell");
}

int cell_of(double y, int a) { return a + 2 * static_cast<int>(y); }

}  // namespace

double loss_fair_binary(const Vector& y, const IntVector& a, const Vector& p,
                        double alpha_fair) {
  require(y.size() > 0, "loss_fair_binary: empty batch");
  double nll = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) nll -= log_lik(y[i], p[i]);
  double reg = 0.0;
  if (alpha_fair != 0.0) {
    auto di = disparate_impact_soft(y, a, p);
    require_di_defined(di);
    reg = di->di;
  }
  return nll + alpha_fair * reg;
}

double loss_reject(const Vector& y, const IntVector& a, const Vector& y_model,
                   const Vector& gate, double gamma_reject, double alpha_fair) {
  require(y.size() > 0, "loss_reject: empty batch");
  double total = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    require(gate[i] >= 0.0 && gate[i] <= 1.0, "loss_reject: gate outside [0,1]");
    total += -(1.0 - gate[i]) * log_lik(y[i], y_model[i]) - gate[i] * gamma_reject;
  }
  if (alpha_fair != 0.0) {
    Vector w = Vector::Ones(y.size()) - gate;
    total += alpha_fair * disparate_impact_soft_weighted(y, a, y_model, w).di;
  }
  return total;
}

double loss_defer(const Vector& y, const IntVector& a, const Vector& y_model,
                  const Vector& y_dm, const Vector& gate, double gamma_defer,
                  double alpha_fair, LossSpec::DiForm di_form) {
  require(y.size() > 0, "loss_defer: empty batch");
  require(y_dm.size() == y.size(),
          "loss_defer: DM predictions are a required training input");
  double total = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    require(gate[i] >= 0.0 && gate[i] <= 1.0, "loss_defer: gate outside [0,1]");
    total += -(1.0 - gate[i]) * log_lik(y[i], y_model[i]) -
             gate[i] * log_lik(y[i], y_dm[i]) - gate[i] * gamma_defer;
  }
  if (alpha_fair != 0.0) {
    if (di_form == LossSpec::DiForm::squared_expected) {
      auto r = expected_squared_di(y, a, y_model, y_dm, gate);
      require(r.has_value(),
              "disparate impact undefined: empty (A,Y) conditioning cell");
      total += alpha_fair * *r;
    } else {
      Vector mix(y.size());
      for (Eigen::Index i = 0; i < y.size(); ++i)
        mix[i] = (1.0 - gate[i]) * y_model[i] + gate[i] * y_dm[i];
      auto di = disparate_impact_soft(y, a, mix);
      require_di_defined(di);
      total += alpha_fair * di->di;
    }
  }
  return total;
}

OrdinalOutput ordinal_outputs(double score, double t0, double t1) {
  require(t0 <= t1, "ordinal_outputs: t0 > t1");
  double s0 = sigmoid(score - t0);
  double s1 = sigmoid(score - t1);
  OrdinalOutput out;
  out.positive = s1;
  out.pass = s0 - s1;
  out.negative = 1.0 - s0;
  double denom = out.positive + out.negative;
  out.prediction = denom > 0.0 ? out.positive / denom : 0.5;
  return out;
}

double loss_punt(const Vector& y, const std::vector<OrdinalOutput>& outs,
                 double gamma) {
  require(y.size() > 0, "loss_punt: empty batch");
  require(static_cast<size_t>(y.size()) == outs.size(),
          "loss_punt: length mismatch");
  double total = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const auto& o = outs[i];
    total += -y[i] * std::log(clamp_prob(o.positive)) -
             (1.0 - y[i]) * std::log(clamp_prob(o.negative)) +
             gamma * std::log(clamp_prob(o.pass));
  }
  return total;
}

double loss_fair_punt(const Vector& y, const IntVector& a,
                      const std::vector<OrdinalOutput>& outs, double gamma,
                      double alpha_fair) {
  double total = loss_punt(y, outs, gamma);
  if (alpha_fair != 0.0) {
    Vector pos(y.size()), neg(y.size());
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      pos[i] = outs[i].positive;
      neg[i] = outs[i].negative;
    }
    auto di_p = disparate_impact_soft(y, a, pos);
    auto di_n = disparate_impact_soft(y, a, neg);
    require_di_defined(di_p);
    require_di_defined(di_n);
    total += alpha_fair * (di_p->di + di_n->di);
  }
  return total;
}

double concrete_sample(double pi, double temperature, double uniform_noise) {
  require(temperature > 0.0, "concrete_sample: temperature must be > 0");
  require(uniform_noise > 0.0 && uniform_noise < 1.0,
          "concrete_sample: noise must be in (0,1)");
  double lp = logit(clamp_prob(pi));
  double lu = logit(uniform_noise);
  return sigmoid((lp + lu) / temperature);
}

double soft_di_grad(const Vector& y, const IntVector& a, const Vector& p,
                    Vector& d_p) {
  auto di = disparate_impact_soft(y, a, p);
  require_di_defined(di);
  // Recover signed mean differences and cell sizes for the gradient.
  std::array<double, 4> sum{};
  std::array<int, 4> count{};
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    int c = cell_of(y[i], a[i]);
    sum[c] += p[i];
    ++count[c];
  }
  auto mean = [&](int c) { return sum[c] / count[c]; };
  double d0 = mean(0) - mean(1);
  double d1 = mean(3) - mean(2);  // (1-m10)-(1-m11) = m11 - m10
  auto sgn = [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); };
  d_p.setZero(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    int c = cell_of(y[i], a[i]);
    double g = 0.0;
    if (c == 0) g = 0.5 * sgn(d0) / count[0];
    if (c == 1) g = -0.5 * sgn(d0) / count[1];
    if (c == 2) g = -0.5 * sgn(d1) / count[2];
    if (c == 3) g = 0.5 * sgn(d1) / count[3];
    d_p[i] = g;
  }
  return di->di;
}

double weighted_soft_di_grad(const Vector& y, const IntVector& a,
                             const Vector& p, const Vector& w, Vector& d_p,
                             Vector& d_w) {
  std::array<double, 4> num{}, den{};
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    int c = cell_of(y[i], a[i]);
    double v = y[i] == 1.0 ? 1.0 - p[i] : p[i];
    num[c] += w[i] * v;
    den[c] += w[i];
  }
  auto rate = [&](int c) { return den[c] > 0.0 ? num[c] / den[c] : 0.0; };
  double r0 = rate(0), r1 = rate(1), r2 = rate(2), r3 = rate(3);
  // Zero-mass cells contribute no difference (see
  // disparate_impact_soft_weighted); their gradients are zero as well.
  bool fp_live = den[0] > 0.0 && den[1] > 0.0;
  bool fn_live = den[2] > 0.0 && den[3] > 0.0;
  double d0 = fp_live ? r0 - r1 : 0.0;
  double d1 = fn_live ? r3 - r2 : 0.0;
  double value = 0.5 * (std::abs(d0) + std::abs(d1));
  auto sgn = [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); };
  d_p.setZero(y.size());
  d_w.setZero(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    int c = cell_of(y[i], a[i]);
    bool live = (c < 2) ? fp_live : fn_live;
    if (!live) continue;
    double v = y[i] == 1.0 ? 1.0 - p[i] : p[i];
    double dv_dp = y[i] == 1.0 ? -1.0 : 1.0;
    // rate_c = num_c / den_c; d rate / d v_i = w_i / den_c,
    // d rate / d w_i = (v_i - rate_c) / den_c.
    double rc = rate(c);
    double coeff = 0.0;  // d value / d rate_c
    if (c == 0) coeff = 0.5 * sgn(d0);
    if (c == 1) coeff = -0.5 * sgn(d0);
    if (c == 2) coeff = -0.5 * sgn(d1);
    if (c == 3) coeff = 0.5 * sgn(d1);
    d_p[i] = coeff * (w[i] / den[c]) * dv_dp;
    d_w[i] = coeff * (v - rc) / den[c];
  }
  return value;
}

double expected_squared_di_grad(const Vector& y, const IntVector& a,
                                const Vector& y_model, const Vector& y_dm,
                                const Vector& gate, Vector& d_model,
                                Vector& d_gate) {
  auto value = expected_squared_di(y, a, y_model, y_dm, gate);
  require(value.has_value(),
          "disparate impact undefined: empty (A,Y) conditioning cell");
  Eigen::Index n = y.size();
  std::array<double, 4> mu_sum{}, var_sum{};
  std::array<int, 4> count{};
  Vector mu(n), var(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double diff = y_dm[i] - y_model[i];
    mu[i] = gate[i] * y_dm[i] + (1.0 - gate[i]) * y_model[i];
    var[i] = gate[i] * (1.0 - gate[i]) * diff * diff;
    int c = cell_of(y[i], a[i]);
    mu_sum[c] += mu[i];
    var_sum[c] += var[i];
    ++count[c];
  }
  auto mean = [&](int c) { return mu_sum[c] / count[c]; };
  double d0 = mean(0) - mean(1);
  double d1 = mean(3) - mean(2);
  d_model.setZero(n);
  d_gate.setZero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    int c = cell_of(y[i], a[i]);
    double nc = static_cast<double>(count[c]);
    // d value / d mu_i through the squared mean difference
    double dmudiff = 0.0;
    if (c == 0) dmudiff = d0 / nc;
    if (c == 1) dmudiff = -d0 / nc;
    if (c == 2) dmudiff = -d1 / nc;
    if (c == 3) dmudiff = d1 / nc;
    // value = 0.5*(d^2 + sum var/n^2 terms): d/d mu_i = dmudiff (the 0.5
    // cancels the 2 from the square), d/d var_i = 0.5 / n^2.
    double dvalue_dmu = dmudiff;
    double dvalue_dvar = 0.5 / (nc * nc);
    double diff = y_dm[i] - y_model[i];
    double dmu_dp = 1.0 - gate[i];
    double dmu_dg = diff;
    double dvar_dp = -2.0 * gate[i] * (1.0 - gate[i]) * diff;
    double dvar_dg = (1.0 - 2.0 * gate[i]) * diff * diff;
    d_model[i] = dvalue_dmu * dmu_dp + dvalue_dvar * dvar_dp;
    d_gate[i] = dvalue_dmu * dmu_dg + dvalue_dvar * dvar_dg;
  }
  return *value;
}

}  // namespace fairdefer
