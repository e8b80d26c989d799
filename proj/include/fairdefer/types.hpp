#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <vector>

namespace fairdefer {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using IntVector = Eigen::VectorXi;

/// Thrown for contract violations (bad dimensions, invalid values,
/// missing inputs). The message names the offending field or cell.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw Error(msg);
}

/// Per-sensitive-group PASS band. Scores <= t0 predict negative,
/// >= t1 predict positive, strictly inside the band pass.
struct ThresholdSet {
  struct Band {
    double t0 = 0.5;
    double t1 = 0.5;
  };
  std::vector<Band> groups;  // indexed by sensitive-attribute value

  void validate() const {
    require(!groups.empty(), "ThresholdSet: no groups");
    for (const auto& g : groups)
      require(g.t0 <= g.t1, "ThresholdSet: t0 > t1");
  }
};

/// Simplex weights over {positive, pass, negative} from a one-score,
/// two-threshold ordinal head, plus the uncertainty-free prediction p.
struct OrdinalOutput {
  double positive = 0.0;   // P
  double pass = 0.0;       // I
  double negative = 0.0;   // N
  double prediction = 0.5; // p = P / (P + N)
};

/// Per-example bundle of model, DM and system outputs.
struct SystemPrediction {
  double y_model = 0.5;  // model probability
  double y_dm = 0.5;     // DM probability (or hard label as 0/1)
  double gate = 0.0;     // deferral probability pi
  int gate_sample = 0;   // s: 1 routes to the DM
  double y_system = 0.5; // (1-s)*y_model + s*y_dm
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

/// Probabilities entering a log are clamped to [kProbFloor, 1-kProbFloor].
inline constexpr double kProbFloor = 1e-7;

inline double clamp_prob(double p) {
  if (p < kProbFloor) return kProbFloor;
  if (p > 1.0 - kProbFloor) return 1.0 - kProbFloor;
  return p;
}

}  // namespace fairdefer
