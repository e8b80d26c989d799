#include "fairdefer/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>
#include <thread>

#include "fairdefer/serialize.hpp"

namespace fairdefer {

const char* model_family_name(ModelFamily f) {
  switch (f) {
    case ModelFamily::binary: return "binary";
    case ModelFamily::fair_binary: return "fair_binary";
    case ModelFamily::reject: return "reject";
    case ModelFamily::defer: return "defer";
    case ModelFamily::posthoc: return "posthoc";
    case ModelFamily::bnn: return "bnn";
  }
  return "?";
}

ModelFamily model_family_from_name(const std::string& name) {
  using F = ModelFamily;
  for (F f : {F::binary, F::fair_binary, F::reject, F::defer, F::posthoc, F::bnn})
    if (name == model_family_name(f)) return f;
  throw Error("unknown model family: " + name);
}

std::vector<SystemPrediction> compose_system(const ModelOutputs& model,
                                             const DmOutputs& dm) {
  Eigen::Index n = model.y_model.size();
  require(model.gate.size() == n && model.defer.size() == n,
          "compose_system: model output length mismatch");
  require(dm.probs.size() == n && dm.hard.size() == n,
          "compose_system: model/DM alignment mismatch");
  std::vector<SystemPrediction> out(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    SystemPrediction& p = out[i];
    p.y_model = model.y_model[i];
    p.y_dm = dm.probs[i];
    p.gate = model.gate[i];
    p.gate_sample = model.defer[i];
    require(p.gate_sample == 0 || p.gate_sample == 1,
            "compose_system: deferral indicator must be binary");
    p.y_system = p.gate_sample == 1 ? p.y_dm : p.y_model;
  }
  return out;
}

MetricsRecord evaluate_system(const std::vector<SystemPrediction>& preds,
                              const Vector& y, const IntVector& a,
                              const std::optional<IntVector>& aux_group) {
  Eigen::Index n = static_cast<Eigen::Index>(preds.size());
  require(n > 0, "evaluate_system: empty prediction set");
  require(y.size() == n && a.size() == n,
          "evaluate_system: label/sensitive length mismatch");
  Vector y_sys(n);
  IntVector s(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    y_sys[i] = preds[i].y_system;
    s[i] = preds[i].gate_sample;
  }
  MetricsRecord m;
  m.error_rate = error_rate(y, y_sys);
  Vector y_hard = y_sys.unaryExpr([](double p) { return double(binarize(p)); });
  if (auto di = disparate_impact_hard(y, a, y_hard)) {
    m.di = di->di;
    m.di_fp_component = di->fp;
    m.di_fn_component = di->fn;
    m.di_defined = true;
  } else {
    m.di_defined = false;
  }
  DeferralRates rates = deferral_rates(s, a);
  m.deferral_rate = rates.overall;
  m.per_group_deferral0 = rates.group0.value_or(0.0);
  m.per_group_deferral1 = rates.group1.value_or(0.0);
  if (aux_group) {
    for (int av : {0, 1}) {
      for (int xv : {0, 1}) {
        int total = 0, correct = 0;
        for (Eigen::Index i = 0; i < n; ++i) {
          if (a[i] != av || (*aux_group)[i] != xv) continue;
          ++total;
          if (binarize(y_sys[i]) == static_cast<int>(y[i])) ++correct;
        }
        if (total > 0)
          m.subgroup_accuracy[{av, xv}] =
              static_cast<double>(correct) / total;
      }
    }
    auto msa = min_subgroup_accuracy(y, y_sys, a, *aux_group);
    if (msa) {
      m.min_subgroup_accuracy = *msa;
      m.msa_defined = true;
    }
  }
  return m;
}

void SweepConfig::validate() const {
  require(!grid.empty(), "SweepConfig: empty grid");
  require(runs_per_setting >= 1, "SweepConfig: runs_per_setting must be >= 1");
  require(hidden_units >= 1, "SweepConfig: hidden_units must be >= 1");
  require(jobs >= 1, "SweepConfig: jobs must be >= 1");
  train.validate();
}

namespace {

double lower_median(std::vector<double> v) {
  require(!v.empty(), "median of empty set");
  std::sort(v.begin(), v.end());
  return v[(v.size() - 1) / 2];
}

LossSpec setting_loss(const SweepConfig& config, const SweepSetting& s) {
  LossSpec spec = config.base_loss;
  spec.gamma = s.gamma;
  spec.alpha_fair = s.alpha_fair;
  switch (config.family) {
    case ModelFamily::binary:
      spec.kind = LossSpec::Kind::fair_binary;
      spec.alpha_fair = 0.0;
      break;
    case ModelFamily::fair_binary:
    case ModelFamily::posthoc:
      spec.kind = LossSpec::Kind::fair_binary;
      break;
    case ModelFamily::reject:
      spec.kind = LossSpec::Kind::reject;
      break;
    case ModelFamily::defer:
      spec.kind = LossSpec::Kind::defer;
      break;
    case ModelFamily::bnn:
      spec.kind = LossSpec::Kind::fair_binary;  // BNN trains its own objective
      spec.alpha_fair = 0.0;
      break;
  }
  return spec;
}

Vector sigmoid_col(const Matrix& logits, int col) {
  return logits.col(col).unaryExpr([](double v) { return sigmoid(v); });
}

ModelOutputs gated_outputs(const ModelParams& params, const Matrix& features) {
  Matrix out = forward_batch(params, features);
  ModelOutputs mo;
  mo.y_model = sigmoid_col(out, 0);
  mo.gate = sigmoid_col(out, 1);
  mo.defer.resize(out.rows());
  for (Eigen::Index i = 0; i < out.rows(); ++i)
    mo.defer[i] = mo.gate[i] > 0.5 ? 1 : 0;  // ties do not defer
  return mo;
}

ModelOutputs plain_outputs(const ModelParams& params, const Matrix& features) {
  Matrix out = forward_batch(params, features);
  ModelOutputs mo;
  mo.y_model = sigmoid_col(out, 0);
  mo.gate = Vector::Zero(out.rows());
  mo.defer = IntVector::Zero(out.rows());
  return mo;
}

// One trained run of a sweep setting, evaluated on the test split.
MetricsRecord run_one(const SweepConfig& config, const SweepSetting& setting,
                      const Dataset& train_data, const Dataset& test_data,
                      const DmModel& dm, uint64_t run_seed) {
  TrainConfig tc = config.train;
  tc.seed = run_seed;
  LossSpec spec = setting_loss(config, setting);
  DmOutputs dm_test = dm_predict(dm, test_data);
  ModelOutputs mo;
  switch (config.family) {
    case ModelFamily::binary:
    case ModelFamily::fair_binary: {
      auto [params, hist] = train(train_data, std::nullopt, spec, tc, run_seed,
                                  config.hidden_units);
      mo = plain_outputs(params, test_data.features);
      break;
    }
    case ModelFamily::reject: {
      auto [params, hist] = train(train_data, std::nullopt, spec, tc, run_seed,
                                  config.hidden_units);
      mo = gated_outputs(params, test_data.features);
      break;
    }
    case ModelFamily::defer: {
      Vector dm_train = dm_predict(dm, train_data).probs;
      auto [params, hist] =
          train(train_data, dm_train, spec, tc, run_seed, config.hidden_units);
      mo = gated_outputs(params, test_data.features);
      break;
    }
    case ModelFamily::posthoc: {
      // Carve a selection split off the training data; thresholds are
      // chosen there, never on test.
      SplitSpec ss;
      ss.train_fraction = 0.8;
      ss.test_fraction = 0.2;
      ss.seed = run_seed;
      ss.stratify_on_label = true;
      auto [fit, select] = split(train_data, ss);
      auto [params, hist] =
          train(fit, std::nullopt, spec, tc, run_seed, config.hidden_units);
      Vector sel_scores =
          sigmoid_col(forward_batch(params, select.features), 0);
      Vector sel_dm = dm_predict(dm, select).probs;
      ThresholdSearchConfig sc;
      sc.gamma = setting.gamma;
      sc.alpha = setting.alpha_fair;
      sc.seed = run_seed;
      ThresholdSet ts = posthoc_threshold_search(sel_scores, select.labels,
                                                 select.sensitive, sel_dm, sc);
      Vector scores = sigmoid_col(forward_batch(params, test_data.features), 0);
      mo.y_model.resize(scores.size());
      mo.gate = Vector::Zero(scores.size());
      mo.defer.resize(scores.size());
      for (Eigen::Index i = 0; i < scores.size(); ++i) {
        switch (apply_thresholds(scores[i], ts, test_data.sensitive[i])) {
          case ThresholdDecision::predict0:
            mo.y_model[i] = 0.0;
            mo.defer[i] = 0;
            break;
          case ThresholdDecision::predict1:
            mo.y_model[i] = 1.0;
            mo.defer[i] = 0;
            break;
          case ThresholdDecision::pass:
            mo.y_model[i] = scores[i];
            mo.defer[i] = 1;
            mo.gate[i] = 1.0;
            break;
        }
      }
      break;
    }
    case ModelFamily::bnn: {
      BnnConfig bc;
      bc.hidden_units = config.hidden_units;
      bc.train = tc;
      BnnPosterior post = bnn_train(train_data, bc);
      BnnPrediction pred = bnn_predict(post, test_data.features,
                                       bc.predict_samples, run_seed);
      mo.y_model = pred.mean;
      mo.gate = pred.uncertainty;
      mo.defer.resize(pred.mean.size());
      // gamma acts as the rejection threshold on the uncertainty score.
      for (Eigen::Index i = 0; i < pred.mean.size(); ++i)
        mo.defer[i] = pred.uncertainty[i] > setting.gamma ? 1 : 0;
      break;
    }
  }
  auto preds = compose_system(mo, dm_test);
  return evaluate_system(preds, test_data.labels, test_data.sensitive,
                         test_data.aux_group);
}

}  // namespace

MetricsRecord median_metrics(const std::vector<MetricsRecord>& runs) {
  require(!runs.empty(), "median_metrics: no runs");
  auto med = [&](auto getter) {
    std::vector<double> vals;
    for (const auto& r : runs) vals.push_back(getter(r));
    return lower_median(vals);
  };
  MetricsRecord m;
  m.error_rate = med([](const MetricsRecord& r) { return r.error_rate; });
  m.di = med([](const MetricsRecord& r) { return r.di; });
  m.di_fp_component =
      med([](const MetricsRecord& r) { return r.di_fp_component; });
  m.di_fn_component =
      med([](const MetricsRecord& r) { return r.di_fn_component; });
  m.deferral_rate = med([](const MetricsRecord& r) { return r.deferral_rate; });
  m.per_group_deferral0 =
      med([](const MetricsRecord& r) { return r.per_group_deferral0; });
  m.per_group_deferral1 =
      med([](const MetricsRecord& r) { return r.per_group_deferral1; });
  m.di_defined = std::all_of(runs.begin(), runs.end(),
                             [](const MetricsRecord& r) { return r.di_defined; });
  m.msa_defined =
      std::all_of(runs.begin(), runs.end(),
                  [](const MetricsRecord& r) { return r.msa_defined; });
  for (const auto& [key, acc] : runs.front().subgroup_accuracy) {
    std::vector<double> vals;
    for (const auto& r : runs) {
      auto it = r.subgroup_accuracy.find(key);
      if (it != r.subgroup_accuracy.end()) vals.push_back(it->second);
    }
    if (!vals.empty()) m.subgroup_accuracy[key] = lower_median(vals);
  }
  if (m.msa_defined)
    m.min_subgroup_accuracy =
        med([](const MetricsRecord& r) { return r.min_subgroup_accuracy; });
  return m;
}

std::vector<SweepPoint> run_sweep(const Dataset& train_data,
                                  const Dataset& test_data, const DmModel& dm,
                                  const SweepConfig& config) {
  config.validate();
  train_data.validate();
  test_data.validate();
  // All run seeds (including retry seeds) derive from the master seed
  // up front, so outcomes depend neither on run failures nor on the
  // execution order under --jobs.
  std::mt19937_64 seed_rng(config.master_seed);
  size_t n_settings = config.grid.size();
  std::vector<std::vector<std::pair<uint64_t, uint64_t>>> seeds(n_settings);
  for (size_t s = 0; s < n_settings; ++s)
    for (int r = 0; r < config.runs_per_setting; ++r) {
      uint64_t seed = seed_rng();
      uint64_t retry = seed_rng();
      seeds[s].emplace_back(seed, retry);
    }

  std::vector<SweepPoint> slots(n_settings);
  auto run_setting = [&](size_t s) {
    SweepPoint& point = slots[s];
    point.setting = config.grid[s];
    for (int r = 0; r < config.runs_per_setting; ++r) {
      auto [seed, retry_seed] = seeds[s][r];
      try {
        point.per_run.push_back(
            run_one(config, point.setting, train_data, test_data, dm, seed));
        point.run_seeds.push_back(seed);
      } catch (const std::exception&) {
        try {
          point.per_run.push_back(run_one(config, point.setting, train_data,
                                          test_data, dm, retry_seed));
          point.run_seeds.push_back(retry_seed);
        } catch (const std::exception& second) {
          ++point.failed_runs;
          std::cerr << "warning: sweep run failed twice (alpha_fair="
                    << point.setting.alpha_fair
                    << ", gamma=" << point.setting.gamma
                    << "): " << second.what() << "\n";
        }
      }
    }
  };
  if (config.jobs <= 1 || n_settings <= 1) {
    for (size_t s = 0; s < n_settings; ++s) run_setting(s);
  } else {
    std::atomic<size_t> next{0};
    auto worker = [&] {
      for (size_t s = next.fetch_add(1); s < n_settings; s = next.fetch_add(1))
        run_setting(s);
    };
    std::vector<std::thread> threads;
    int n_threads = std::min<int>(config.jobs, static_cast<int>(n_settings));
    for (int t = 0; t < n_threads; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }

  std::vector<SweepPoint> points;
  for (auto& point : slots) {
    if (point.failed_runs * 2 > config.runs_per_setting) {
      std::cerr << "warning: dropping sweep setting with " << point.failed_runs
                << "/" << config.runs_per_setting << " failed runs\n";
      continue;
    }
    point.median_metrics = median_metrics(point.per_run);
    points.push_back(std::move(point));
  }
  return points;
}

std::vector<int> sweep_pareto_front(const std::vector<SweepPoint>& points) {
  std::vector<std::pair<double, double>> coords;
  for (const auto& p : points)
    coords.emplace_back(p.median_metrics.error_rate, p.median_metrics.di);
  return pareto_front(coords);
}

std::vector<std::vector<int>> deferral_rate_breakdown(
    const std::vector<SweepPoint>& points,
    const std::vector<std::pair<double, double>>& bins) {
  require(!bins.empty(), "deferral_rate_breakdown: no bins");
  for (size_t b = 0; b < bins.size(); ++b) {
    require(bins[b].first < bins[b].second,
            "deferral_rate_breakdown: empty bin interval");
    if (b > 0)
      require(bins[b].first == bins[b - 1].second,
              "deferral_rate_breakdown: bins must be contiguous");
  }
  require(bins.front().first == 0.0 && bins.back().second == 1.0,
          "deferral_rate_breakdown: bins must partition [0,1]");
  std::vector<std::vector<int>> fronts(bins.size());
  for (size_t b = 0; b < bins.size(); ++b) {
    std::vector<int> members;
    std::vector<std::pair<double, double>> coords;
    for (size_t i = 0; i < points.size(); ++i) {
      double d = points[i].median_metrics.deferral_rate;
      bool in = d >= bins[b].first &&
                (d < bins[b].second || (b + 1 == bins.size() && d == 1.0));
      if (!in) continue;
      members.push_back(static_cast<int>(i));
      coords.emplace_back(points[i].median_metrics.error_rate,
                          points[i].median_metrics.di);
    }
    for (int k : pareto_front(coords)) fronts[b].push_back(members[k]);
  }
  return fronts;
}

void OracleEquivalenceConfig::validate() const {
  require(!gamma_rejects.empty(), "OracleEquivalenceConfig: no gamma values");
  require(constant_loss_alpha <= 0.0,
          "OracleEquivalenceConfig: alpha must be <= 0");
  require(runs_per_setting >= 1,
          "OracleEquivalenceConfig: runs_per_setting must be >= 1");
  train.validate();
}

std::vector<OracleEquivalencePair> oracle_equivalence_experiment(
    const Dataset& train_data, const Dataset& test_data, const DmModel& test_dm,
    const OracleEquivalenceConfig& config) {
  config.validate();
  Vector train_dm_probs =
      constant_loss_predictions(train_data.labels, config.constant_loss_alpha);
  DmOutputs dm_test = dm_predict(test_dm, test_data);
  std::mt19937_64 seed_rng(config.master_seed);
  std::vector<OracleEquivalencePair> out;
  for (double gr : config.gamma_rejects) {
    OracleEquivalencePair pair;
    pair.gamma_reject = gr;
    pair.gamma_defer = gr - config.constant_loss_alpha;
    std::vector<MetricsRecord> reject_runs, defer_runs;
    for (int r = 0; r < config.runs_per_setting; ++r) {
      uint64_t seed = seed_rng();  // matched across the two arms
      TrainConfig tc = config.train;
      tc.seed = seed;
      LossSpec rspec;
      rspec.kind = LossSpec::Kind::reject;
      rspec.gamma = gr;
      auto [rparams, rh] = train(train_data, std::nullopt, rspec, tc, seed,
                                 config.hidden_units);
      auto rmo = gated_outputs(rparams, test_data.features);
      reject_runs.push_back(evaluate_system(compose_system(rmo, dm_test),
                                            test_data.labels,
                                            test_data.sensitive,
                                            test_data.aux_group));
      LossSpec dspec;
      dspec.kind = LossSpec::Kind::defer;
      dspec.gamma = pair.gamma_defer;
      auto [dparams, dh] = train(train_data, train_dm_probs, dspec, tc, seed,
                                 config.hidden_units);
      auto dmo = gated_outputs(dparams, test_data.features);
      defer_runs.push_back(evaluate_system(compose_system(dmo, dm_test),
                                           test_data.labels,
                                           test_data.sensitive,
                                           test_data.aux_group));
    }
    pair.reject_median = median_metrics(reject_runs);
    pair.defer_median = median_metrics(defer_runs);
    pair.error_diff =
        std::abs(pair.reject_median.error_rate - pair.defer_median.error_rate);
    pair.di_diff = std::abs(pair.reject_median.di - pair.defer_median.di);
    pair.deferral_diff = std::abs(pair.reject_median.deferral_rate -
                                  pair.defer_median.deferral_rate);
    out.push_back(std::move(pair));
  }
  return out;
}

void ExperimentReport::validate() const {
  for (int i : pareto_indices)
    require(i >= 0 && static_cast<size_t>(i) < points.size(),
            "ExperimentReport: pareto index out of range");
}

std::string dataset_hash(const Dataset& data) {
  uint64_t h = 1469598103934665603ULL;  // FNV-1a
  auto mix = [&h](const void* bytes, size_t len) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (size_t i = 0; i < len; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  mix(data.features.data(), sizeof(double) * data.features.size());
  mix(data.labels.data(), sizeof(double) * data.labels.size());
  mix(data.sensitive.data(), sizeof(int) * data.sensitive.size());
  char buf[19];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

nlohmann::ordered_json sweep_point_to_json(const SweepPoint& p) {
  nlohmann::ordered_json j;
  j["alpha_fair"] = p.setting.alpha_fair;
  j["gamma"] = p.setting.gamma;
  j["run_seeds"] = p.run_seeds;
  j["failed_runs"] = p.failed_runs;
  j["median_metrics"] = metrics_to_json(p.median_metrics);
  nlohmann::ordered_json runs = nlohmann::ordered_json::array();
  for (const auto& r : p.per_run) runs.push_back(metrics_to_json(r));
  j["per_run_metrics"] = std::move(runs);
  return j;
}

SweepPoint sweep_point_from_json(const nlohmann::json& j) {
  SweepPoint p;
  p.setting.alpha_fair = j.at("alpha_fair").get<double>();
  p.setting.gamma = j.at("gamma").get<double>();
  p.run_seeds = j.at("run_seeds").get<std::vector<uint64_t>>();
  p.failed_runs = j.at("failed_runs").get<int>();
  p.median_metrics = metrics_from_json(j.at("median_metrics"));
  for (const auto& r : j.at("per_run_metrics"))
    p.per_run.push_back(metrics_from_json(r));
  return p;
}

}  // namespace

void save_report(const ExperimentReport& report,
                 const std::filesystem::path& path) {
  report.validate();
  nlohmann::ordered_json j;
  j["format"] = "fairdefer-report-v1";
  j["scenario"] = report.scenario;
  j["model_family"] = report.model_family;
  j["dataset_hash"] = report.dataset_hash;
  j["code_version"] = report.code_version;
  j["master_seed"] = report.master_seed;
  j["pareto_indices"] = report.pareto_indices;
  nlohmann::ordered_json pts = nlohmann::ordered_json::array();
  for (const auto& p : report.points) pts.push_back(sweep_point_to_json(p));
  j["points"] = std::move(pts);
  std::ofstream out(path);
  require(out.good(), "save_report: cannot write " + path.string());
  out << j.dump(2) << "\n";
}

ExperimentReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), "load_report: cannot open " + path.string());
  nlohmann::json j = nlohmann::json::parse(in);
  require(j.at("format").get<std::string>() == "fairdefer-report-v1",
          "load_report: unrecognized format tag");
  ExperimentReport report;
  report.scenario = j.at("scenario").get<std::string>();
  report.model_family = j.at("model_family").get<std::string>();
  report.dataset_hash = j.at("dataset_hash").get<std::string>();
  report.code_version = j.at("code_version").get<std::string>();
  report.master_seed = j.at("master_seed").get<uint64_t>();
  report.pareto_indices = j.at("pareto_indices").get<std::vector<int>>();
  for (const auto& p : j.at("points"))
    report.points.push_back(sweep_point_from_json(p));
  report.validate();
  return report;
}

void save_curve_csv(const std::vector<SweepPoint>& points,
                    const std::filesystem::path& path) {
  std::ofstream out(path);
  require(out.good(), "save_curve_csv: cannot write " + path.string());
  out << "alpha_fair,gamma,error,di,deferral_rate,deferral_group0,"
         "deferral_group1,msa\n";
  char buf[32];
  auto fmt = [&buf](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  for (const auto& p : points) {
    const MetricsRecord& m = p.median_metrics;
    out << fmt(p.setting.alpha_fair) << "," << fmt(p.setting.gamma) << ","
        << fmt(m.error_rate) << "," << fmt(m.di) << "," << fmt(m.deferral_rate)
        << "," << fmt(m.per_group_deferral0) << ","
        << fmt(m.per_group_deferral1) << ","
        << fmt(m.msa_defined ? m.min_subgroup_accuracy : -1.0) << "\n";
  }
}

}  // namespace fairdefer
