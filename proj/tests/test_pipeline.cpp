#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <random>

#include "fairdefer/pipeline.hpp"

using namespace fairdefer;

TEST_CASE("compose_system routes by the sampled gate") {
  ModelOutputs model;
  model.y_model.resize(4);
  model.y_model << 0.2, 0.8, 0.6, 0.1;
  model.gate.resize(4);
  model.gate << 0.1, 0.9, 0.4, 0.7;
  model.defer.resize(4);
  model.defer << 0, 1, 0, 1;
  DmOutputs dm;
  dm.probs.resize(4);
  dm.probs << 0.95, 0.05, 0.5, 0.99;
  dm.hard.resize(4);
  dm.hard << 1, 0, 1, 1;
  auto preds = compose_system(model, dm);
  REQUIRE(preds.size() == 4);
  for (int i = 0; i < 4; ++i) {
    CHECK(preds[i].y_model == model.y_model[i]);
    CHECK(preds[i].y_dm == dm.probs[i]);
    CHECK(preds[i].gate == model.gate[i]);
    CHECK(preds[i].gate_sample == model.defer[i]);
    double want = model.defer[i] ? dm.probs[i] : model.y_model[i];
    CHECK(preds[i].y_system == want);
  }
  DmOutputs wrong = dm;
  wrong.probs.conservativeResize(3);
  CHECK_THROWS_AS(compose_system(model, wrong), Error);
}

TEST_CASE("evaluate_system on a hand-checkable eight-example instance") {
  // Two per (A, aux) subgroup. Deferred examples inherit the DM answer.
  Vector y(8);
  y << 0, 1, 0, 1, 0, 1, 0, 1;
  IntVector a(8), aux(8);
  a << 0, 0, 0, 0, 1, 1, 1, 1;
  aux << 0, 0, 1, 1, 0, 0, 1, 1;
  ModelOutputs model;
  model.y_model.resize(8);
  model.y_model << 0.1, 0.9, 0.8, 0.2, 0.3, 0.7, 0.4, 0.6;
  model.gate = Vector::Zero(8);
  model.defer.resize(8);
  model.defer << 0, 0, 1, 1, 0, 0, 0, 0;
  DmOutputs dm;
  dm.probs.resize(8);
  dm.probs << 0, 1, 0, 1, 0, 1, 0, 1;  // oracle
  dm.hard = dm.probs;
  auto preds = compose_system(model, dm);
  MetricsRecord rec = evaluate_system(preds, y, a, aux);
  // system predictions: examples 2,3 fixed by the DM, rest from the model
  // errors: none (model is right everywhere it kept the decision)
  CHECK(rec.error_rate == doctest::Approx(0.0));
  CHECK(rec.deferral_rate == doctest::Approx(2.0 / 8.0));
  CHECK(rec.per_group_deferral0 == doctest::Approx(0.5));
  CHECK(rec.per_group_deferral1 == doctest::Approx(0.0));
  REQUIRE(rec.msa_defined);
  CHECK(rec.min_subgroup_accuracy == doctest::Approx(1.0));
  CHECK(rec.subgroup_accuracy.at({0, 1}) == doctest::Approx(1.0));
  REQUIRE(rec.di_defined);
  CHECK(rec.di == doctest::Approx(0.0));
  // flip one model answer: error and the (1,1) subgroup move together
  model.y_model[7] = 0.2;
  preds = compose_system(model, dm);
  rec = evaluate_system(preds, y, a, aux);
  CHECK(rec.error_rate == doctest::Approx(1.0 / 8.0));
  CHECK(rec.subgroup_accuracy.at({1, 1}) == doctest::Approx(0.5));
  CHECK(rec.min_subgroup_accuracy == doctest::Approx(0.5));
}

TEST_CASE("median_metrics takes the lower median componentwise") {
  std::vector<MetricsRecord> runs(4);
  double errors[] = {0.4, 0.1, 0.3, 0.2};
  double dis[] = {0.05, 0.2, 0.1, 0.15};
  for (int i = 0; i < 4; ++i) {
    runs[i].error_rate = errors[i];
    runs[i].di = dis[i];
    runs[i].deferral_rate = 0.1 * i;
    runs[i].di_defined = true;
    runs[i].msa_defined = (i != 2);
  }
  MetricsRecord med = median_metrics(runs);
  CHECK(med.error_rate == doctest::Approx(0.2));  // lower of {0.2, 0.3}
  CHECK(med.di == doctest::Approx(0.1));
  CHECK(med.deferral_rate == doctest::Approx(0.1));
  CHECK(med.di_defined);
  CHECK_FALSE(med.msa_defined);  // any undefined run poisons the flag
  // odd count: the true middle element
  runs.resize(3);
  med = median_metrics(runs);
  CHECK(med.error_rate == doctest::Approx(0.3));
}

namespace {

Dataset sweep_data(int n, uint64_t seed) {
  SynthSpec spec;
  spec.n = n;
  spec.gaussian_dims = 2;
  spec.class_separation = 2.0;
  spec.z_informativeness = 0.9;
  return synth_generate(spec, seed);
}

SweepConfig quick_sweep(ModelFamily family) {
  SweepConfig config;
  config.family = family;
  config.grid = {{0.0, 0.2}, {0.5, 0.2}};
  config.runs_per_setting = 3;
  config.master_seed = 19;
  config.hidden_units = 3;
  config.train.max_epochs = 60;
  config.train.patience_epochs = 15;
  config.base_loss.kind = LossSpec::Kind::defer;
  return config;
}

}  // namespace

TEST_CASE("run_sweep is deterministic and jobs-invariant") {
  Dataset train_data = sweep_data(240, 201);
  Dataset test_data = sweep_data(120, 202);
  DmModel dm = oracle_dm();
  SweepConfig config = quick_sweep(ModelFamily::defer);
  auto a = run_sweep(train_data, test_data, dm, config);
  auto b = run_sweep(train_data, test_data, dm, config);
  config.jobs = 2;
  auto c = run_sweep(train_data, test_data, dm, config);
  REQUIRE(a.size() == 2);
  REQUIRE(b.size() == a.size());
  REQUIRE(c.size() == a.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].run_seeds == b[i].run_seeds);
    CHECK(a[i].run_seeds == c[i].run_seeds);
    REQUIRE(a[i].per_run.size() == 3);
    for (size_t r = 0; r < a[i].per_run.size(); ++r) {
      CHECK(a[i].per_run[r].error_rate == b[i].per_run[r].error_rate);
      CHECK(a[i].per_run[r].error_rate == c[i].per_run[r].error_rate);
      CHECK(a[i].per_run[r].di == c[i].per_run[r].di);
    }
    CHECK(a[i].median_metrics.error_rate == c[i].median_metrics.error_rate);
  }
  // different master seeds change the run seeds
  config.jobs = 1;
  config.master_seed = 20;
  auto d = run_sweep(train_data, test_data, dm, config);
  CHECK(a[0].run_seeds != d[0].run_seeds);
}

TEST_CASE("sweep pareto front never contains a dominated setting") {
  Dataset train_data = sweep_data(240, 203);
  Dataset test_data = sweep_data(120, 204);
  SweepConfig config = quick_sweep(ModelFamily::fair_binary);
  config.base_loss.kind = LossSpec::Kind::fair_binary;
  config.grid = {{0.0, 0.0}, {0.3, 0.0}, {1.0, 0.0}};
  auto points = run_sweep(train_data, test_data, oracle_dm(), config);
  auto front = sweep_pareto_front(points);
  REQUIRE(!front.empty());
  for (int i : front) {
    for (size_t j = 0; j < points.size(); ++j) {
      if (static_cast<int>(j) == i) continue;
      const auto& mi = points[i].median_metrics;
      const auto& mj = points[j].median_metrics;
      bool dominates = mj.error_rate <= mi.error_rate && mj.di <= mi.di &&
                       (mj.error_rate < mi.error_rate || mj.di < mi.di);
      CHECK_FALSE(dominates);
    }
  }
}

TEST_CASE("deferral_rate_breakdown bins are half-open and must partition") {
  std::vector<SweepPoint> points(4);
  double rates[] = {0.0, 0.3, 0.65, 1.0};
  for (int i = 0; i < 4; ++i) {
    points[i].median_metrics.deferral_rate = rates[i];
    points[i].median_metrics.error_rate = 0.1 * i;
    points[i].median_metrics.di = 0.4 - 0.1 * i;
  }
  std::vector<std::pair<double, double>> bins = {{0.0, 0.3}, {0.3, 0.7}, {0.7, 1.0}};
  auto fronts = deferral_rate_breakdown(points, bins);
  REQUIRE(fronts.size() == 3);
  CHECK(fronts[0] == std::vector<int>{0});        // 0.0 in [0, 0.3)
  CHECK(fronts[1] == std::vector<int>{1, 2});     // 0.3 lands in the middle bin
  CHECK(fronts[2] == std::vector<int>{3});        // 1.0 goes to the last bin
  // a single bin over [0,1] reproduces the global front
  auto single = deferral_rate_breakdown(points, {{0.0, 1.0}});
  CHECK(single[0] == sweep_pareto_front(points));
  CHECK_THROWS_AS(deferral_rate_breakdown(points, {{0.0, 0.5}}), Error);
  CHECK_THROWS_AS(deferral_rate_breakdown(points, {{0.0, 0.6}, {0.5, 1.0}}),
                  Error);
}

TEST_CASE("oracle equivalence pairs use the gamma offset") {
  Dataset train_data = sweep_data(240, 205);
  Dataset test_data = sweep_data(120, 206);
  OracleEquivalenceConfig config;
  config.gamma_rejects = {0.2, 0.4};
  config.constant_loss_alpha = std::log(0.9);
  config.runs_per_setting = 3;
  config.master_seed = 31;
  config.hidden_units = 3;
  config.train.max_epochs = 60;
  config.train.patience_epochs = 15;
  auto pairs =
      oracle_equivalence_experiment(train_data, test_data, oracle_dm(), config);
  REQUIRE(pairs.size() == 2);
  for (const auto& pair : pairs) {
    CHECK(pair.gamma_defer ==
          doctest::Approx(pair.gamma_reject - config.constant_loss_alpha));
    CHECK(pair.error_diff ==
          doctest::Approx(std::abs(pair.reject_median.error_rate -
                                   pair.defer_median.error_rate)));
    CHECK(pair.error_diff >= 0.0);
    CHECK(pair.deferral_diff >= 0.0);
  }
}

TEST_CASE("report round-trips through JSON and hashes are stable") {
  Dataset data = sweep_data(80, 207);
  std::string h1 = dataset_hash(data);
  std::string h2 = dataset_hash(data);
  CHECK(h1 == h2);
  Dataset other = data;
  other.features(0, 0) += 1e-9;
  CHECK(dataset_hash(other) != h1);

  ExperimentReport report;
  report.scenario = "high_accuracy";
  report.model_family = "defer";
  report.dataset_hash = h1;
  report.code_version = "0.1.0";
  report.master_seed = 7;
  SweepPoint p;
  p.setting = {0.25, 1.0 / 3.0};
  p.run_seeds = {11, 12, 13};
  MetricsRecord m;
  m.error_rate = 0.125;
  m.di = 0.0625;
  m.di_defined = true;
  m.deferral_rate = 0.5;
  m.subgroup_accuracy[{0, 1}] = 0.75;
  m.min_subgroup_accuracy = 0.75;
  m.msa_defined = true;
  p.per_run = {m, m, m};
  p.median_metrics = m;
  report.points = {p};
  report.pareto_indices = {0};

  auto dir = std::filesystem::temp_directory_path() / "fairdefer_test_report";
  std::filesystem::create_directories(dir);
  auto path = dir / "report.json";
  save_report(report, path);
  ExperimentReport r = load_report(path);
  CHECK(r.scenario == report.scenario);
  CHECK(r.model_family == report.model_family);
  CHECK(r.dataset_hash == report.dataset_hash);
  CHECK(r.master_seed == report.master_seed);
  REQUIRE(r.points.size() == 1);
  CHECK(r.points[0].setting.alpha_fair == p.setting.alpha_fair);
  CHECK(r.points[0].setting.gamma == p.setting.gamma);  // 1/3 bit-exact
  CHECK(r.points[0].run_seeds == p.run_seeds);
  CHECK(r.points[0].median_metrics.error_rate == m.error_rate);
  CHECK(r.points[0].median_metrics.subgroup_accuracy == m.subgroup_accuracy);
  CHECK(r.pareto_indices == report.pareto_indices);
  save_curve_csv(report.points, dir / "curves.csv");
  CHECK(std::filesystem::file_size(dir / "curves.csv") > 0);
  std::filesystem::remove_all(dir);
}
