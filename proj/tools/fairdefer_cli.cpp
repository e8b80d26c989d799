// fairdefer command-line surface: config-driven data preparation,
// training, DM simulation, sweeps and reporting. Every command reads a
// JSON RunConfig, writes its artifacts into the config's output
// directory, and echoes the effective config for provenance. Primary
// outputs are byte-stable across reruns; wall-clock metadata goes to a
// sidecar.
#include <chrono>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "fairdefer/bnn.hpp"
#include "fairdefer/config.hpp"
#include "fairdefer/pipeline.hpp"
#include "fairdefer/serialize.hpp"

namespace fd = fairdefer;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr const char* kVersion = "fairdefer 0.1.0";

struct CommonOpts {
  std::string config_path;
  std::optional<uint64_t> seed_override;
  std::optional<std::string> out_override;
  int jobs = 1;
};

fd::RunConfig load_run_config(const CommonOpts& opts) {
  fd::RunConfig config = fd::parse_config(opts.config_path);
  if (opts.seed_override) {
    config.seed = *opts.seed_override;
    config.train.seed = config.seed;
    config.dm.corruption.seed = config.seed;
  }
  if (opts.out_override) config.output_dir = *opts.out_override;
  return config;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out.good()) throw fd::Error("cannot write " + path.string());
  out << text;
}

// Effective config + master seed into the output directory (primary,
// deterministic) and wall-clock details into the sidecar.
void write_provenance(const fd::RunConfig& config, const std::string& command) {
  std::filesystem::create_directories(config.output_dir);
  ordered_json eff = fd::effective_config_json(config);
  eff["command"] = command;
  eff["code_version"] = kVersion;
  write_text(config.output_dir / "effective_config.json", eff.dump(2) + "\n");
  auto now = std::chrono::system_clock::now();
  ordered_json meta;
  meta["command"] = command;
  meta["unix_time"] = std::chrono::duration_cast<std::chrono::seconds>(
                          now.time_since_epoch())
                          .count();
  write_text(config.output_dir / "run_metadata.json", meta.dump(2) + "\n");
}

ordered_json dm_to_json(const fd::DmModel& dm) {
  ordered_json j;
  j["format"] = "fairdefer-dm-v1";
  j["scenario"] = fd::dm_scenario_name(dm.scenario);
  if (dm.base) j["base"] = fd::model_params_to_json(*dm.base);
  if (dm.corruption) {
    ordered_json c;
    c["aux_value"] = dm.corruption->aux_value;
    c["flip_prob"] = dm.corruption->flip_prob;
    c["seed"] = dm.corruption->seed;
    j["corruption"] = std::move(c);
  }
  if (dm.constant_loss_value) j["constant_loss_value"] = *dm.constant_loss_value;
  return j;
}

fd::DmModel dm_from_json(const json& j) {
  if (j.at("format").get<std::string>() != "fairdefer-dm-v1")
    throw fd::Error("DM file: unrecognized format tag");
  fd::DmModel dm;
  dm.scenario = fd::dm_scenario_from_name(j.at("scenario").get<std::string>());
  if (j.contains("base")) dm.base = fd::model_params_from_json(j.at("base"));
  if (j.contains("corruption")) {
    fd::DmCorruption c;
    c.aux_value = j.at("corruption").at("aux_value").get<int>();
    c.flip_prob = j.at("corruption").at("flip_prob").get<double>();
    c.seed = j.at("corruption").at("seed").get<uint64_t>();
    dm.corruption = c;
  }
  if (j.contains("constant_loss_value"))
    dm.constant_loss_value = j.at("constant_loss_value").get<double>();
  dm.validate();
  return dm;
}

// Builds the config's DM, training it on the train split when the
// scenario is learned.
fd::DmModel build_dm(const fd::RunConfig& config, const fd::Dataset& train) {
  switch (config.dm.scenario) {
    case fd::DmScenario::oracle:
      return fd::oracle_dm();
    case fd::DmScenario::constant_loss:
      return fd::constant_loss_dm(config.dm.constant_loss_alpha);
    default: {
      std::optional<fd::DmCorruption> corruption;
      if (config.dm.scenario == fd::DmScenario::inconsistent)
        corruption = config.dm.corruption;
      return fd::train_dm(train, config.dm.scenario, config.train, config.seed,
                          config.hidden_units, corruption);
    }
  }
}

fd::LossSpec family_loss(const fd::RunConfig& config) {
  fd::LossSpec spec = config.loss;
  switch (config.family) {
    case fd::ModelFamily::binary:
      spec.kind = fd::LossSpec::Kind::fair_binary;
      spec.alpha_fair = 0.0;
      break;
    case fd::ModelFamily::fair_binary:
    case fd::ModelFamily::posthoc:
      spec.kind = fd::LossSpec::Kind::fair_binary;
      break;
    case fd::ModelFamily::reject:
      spec.kind = fd::LossSpec::Kind::reject;
      break;
    case fd::ModelFamily::defer:
      spec.kind = fd::LossSpec::Kind::defer;
      break;
    case fd::ModelFamily::bnn:
      throw fd::Error("train: the bnn family has no frozen-model format; "
                      "use it through sweep");
  }
  return spec;
}

int cmd_prepare_data(const CommonOpts& opts) {
  fd::RunConfig config = load_run_config(opts);
  write_provenance(config, "prepare-data");
  auto [train, test] = fd::load_config_dataset(config);
  fd::save_dataset(train, config.output_dir / "train", config.seed);
  fd::save_dataset(test, config.output_dir / "test", config.seed);
  std::cout << "prepared " << train.n() << " train / " << test.n()
            << " test examples -> " << config.output_dir.string() << "\n";
  return 0;
}

int cmd_train(const CommonOpts& opts) {
  fd::RunConfig config = load_run_config(opts);
  write_provenance(config, "train");
  auto [train_data, test_data] = fd::load_config_dataset(config);
  fd::LossSpec spec = family_loss(config);

  fd::SavedModel saved;
  saved.seed = config.seed;
  saved.spec = spec;
  if (config.family == fd::ModelFamily::posthoc) {
    fd::DmModel dm = build_dm(config, train_data);
    fd::SplitSpec ss;
    ss.train_fraction = 0.8;
    ss.test_fraction = 0.2;
    ss.seed = config.seed;
    ss.stratify_on_label = true;
    auto [fit, select] = fd::split(train_data, ss);
    auto [params, history] = fd::train(fit, std::nullopt, spec, config.train,
                                       config.seed, config.hidden_units);
    fd::Vector scores =
        fd::forward_batch(params, select.features)
            .col(0)
            .unaryExpr([](double v) { return fd::sigmoid(v); });
    fd::ThresholdSearchConfig sc;
    sc.gamma = spec.gamma;
    sc.alpha = spec.alpha_fair;
    sc.seed = config.seed;
    saved.posthoc_thresholds = fd::posthoc_threshold_search(
        scores, select.labels, select.sensitive,
        fd::dm_predict(dm, select).probs, sc);
    saved.params = std::move(params);
  } else {
    std::optional<fd::Vector> dm_probs;
    if (spec.kind == fd::LossSpec::Kind::defer) {
      fd::DmModel dm = build_dm(config, train_data);
      dm_probs = fd::dm_predict(dm, train_data).probs;
    }
    auto [params, history] = fd::train(train_data, dm_probs, spec, config.train,
                                       config.seed, config.hidden_units);
    saved.params = std::move(params);
  }
  fd::save_model(saved, config.output_dir / "model.json");
  std::cout << "trained " << fd::model_family_name(config.family)
            << " model -> " << (config.output_dir / "model.json").string()
            << "\n";
  return 0;
}

int cmd_train_dm(const CommonOpts& opts) {
  fd::RunConfig config = load_run_config(opts);
  write_provenance(config, "train-dm");
  auto [train_data, test_data] = fd::load_config_dataset(config);
  fd::DmModel dm = build_dm(config, train_data);
  write_text(config.output_dir / "dm.json", dm_to_json(dm).dump(2) + "\n");
  fd::save_dm_predictions(config.output_dir / "dm_train.csv",
                          train_data.example_ids,
                          fd::dm_predict(dm, train_data));
  fd::save_dm_predictions(config.output_dir / "dm_test.csv",
                          test_data.example_ids, fd::dm_predict(dm, test_data));
  std::cout << "trained " << fd::dm_scenario_name(config.dm.scenario)
            << " DM -> " << (config.output_dir / "dm.json").string() << "\n";
  return 0;
}

int cmd_sweep(const CommonOpts& opts) {
  fd::RunConfig config = load_run_config(opts);
  write_provenance(config, "sweep");
  auto [train_data, test_data] = fd::load_config_dataset(config);
  fd::DmModel dm = build_dm(config, train_data);
  fd::SweepConfig sc;
  sc.family = config.family;
  for (double a : config.sweep_alpha_fair)
    for (double g : config.sweep_gamma) sc.grid.push_back({a, g});
  sc.runs_per_setting = config.runs_per_setting;
  sc.master_seed = config.seed;
  sc.hidden_units = config.hidden_units;
  sc.train = config.train;
  sc.base_loss = config.loss;
  sc.jobs = opts.jobs;
  auto points = fd::run_sweep(train_data, test_data, dm, sc);

  fd::ExperimentReport report;
  report.scenario = fd::dm_scenario_name(config.dm.scenario);
  report.model_family = fd::model_family_name(config.family);
  report.points = points;
  report.pareto_indices = fd::sweep_pareto_front(points);
  report.dataset_hash = fd::dataset_hash(train_data);
  report.code_version = kVersion;
  report.master_seed = config.seed;
  fd::save_report(report, config.output_dir / "report.json");
  fd::save_curve_csv(points, config.output_dir / "curves.csv");
  std::cout << "swept " << points.size() << " settings -> "
            << (config.output_dir / "report.json").string() << "\n";
  return 0;
}

int cmd_evaluate(const CommonOpts& opts, const std::string& model_path,
                 const std::string& dm_csv_path) {
  fd::RunConfig config = load_run_config(opts);
  write_provenance(config, "evaluate");
  auto [train_data, test_data] = fd::load_config_dataset(config);
  fd::SavedModel model = fd::load_model(model_path);

  fd::DmOutputs dm_test;
  if (!dm_csv_path.empty()) {
    dm_test = fd::load_dm_predictions(dm_csv_path, test_data.example_ids);
  } else {
    fd::DmModel dm = build_dm(config, train_data);
    dm_test = fd::dm_predict(dm, test_data);
  }

  fd::Matrix out = fd::forward_batch(model.params, test_data.features);
  fd::ModelOutputs mo;
  Eigen::Index n = out.rows();
  mo.y_model.resize(n);
  mo.gate = fd::Vector::Zero(n);
  mo.defer = fd::IntVector::Zero(n);
  if (model.params.head_kind == fd::HeadKind::gated_two_output) {
    for (Eigen::Index i = 0; i < n; ++i) {
      mo.y_model[i] = fd::sigmoid(out(i, 0));
      mo.gate[i] = fd::sigmoid(out(i, 1));
      mo.defer[i] = mo.gate[i] > 0.5 ? 1 : 0;
    }
  } else if (model.posthoc_thresholds) {
    for (Eigen::Index i = 0; i < n; ++i) {
      double score = fd::sigmoid(out(i, 0));
      switch (fd::apply_thresholds(score, *model.posthoc_thresholds,
                                   test_data.sensitive[i])) {
        case fd::ThresholdDecision::predict0: mo.y_model[i] = 0.0; break;
        case fd::ThresholdDecision::predict1: mo.y_model[i] = 1.0; break;
        case fd::ThresholdDecision::pass:
          mo.y_model[i] = score;
          mo.gate[i] = 1.0;
          mo.defer[i] = 1;
          break;
      }
    }
  } else {
    for (Eigen::Index i = 0; i < n; ++i) mo.y_model[i] = fd::sigmoid(out(i, 0));
  }
  auto metrics = fd::evaluate_system(fd::compose_system(mo, dm_test),
                                     test_data.labels, test_data.sensitive,
                                     test_data.aux_group);
  write_text(config.output_dir / "metrics.json",
             fd::metrics_to_json(metrics).dump(2) + "\n");
  std::cout << fd::metrics_to_json(metrics).dump(2) << "\n";
  return 0;
}

int cmd_pareto(const CommonOpts& opts, const std::string& report_path) {
  fd::RunConfig config = load_run_config(opts);
  write_provenance(config, "pareto");
  std::filesystem::path in = report_path.empty()
                                 ? config.output_dir / "report.json"
                                 : std::filesystem::path(report_path);
  fd::ExperimentReport report = fd::load_report(in);
  std::vector<int> front = fd::sweep_pareto_front(report.points);
  std::vector<fd::SweepPoint> front_points;
  for (int i : front) front_points.push_back(report.points[i]);
  fd::save_curve_csv(front_points, config.output_dir / "pareto.csv");
  std::cout << "pareto front: " << front.size() << " of "
            << report.points.size() << " points -> "
            << (config.output_dir / "pareto.csv").string() << "\n";
  return 0;
}

int cmd_report(const CommonOpts& opts,
               const std::vector<std::string>& report_paths) {
  fd::RunConfig config = load_run_config(opts);
  write_provenance(config, "report");
  if (report_paths.empty())
    throw fd::Error("report: pass at least one --in report.json");
  ordered_json combined;
  combined["format"] = "fairdefer-combined-report-v1";
  combined["code_version"] = kVersion;
  combined["master_seed"] = config.seed;
  ordered_json reports = ordered_json::array();
  for (const auto& path : report_paths) {
    std::ifstream in(path);
    if (!in.good()) throw fd::Error("report: cannot open " + path);
    fd::ExperimentReport r = fd::load_report(path);  // validates the schema
    (void)r;
    in.seekg(0);
    reports.push_back(ordered_json::parse(in));
  }
  combined["reports"] = std::move(reports);
  write_text(config.output_dir / "combined_report.json",
             combined.dump(2) + "\n");
  std::cout << "combined " << report_paths.size() << " reports -> "
            << (config.output_dir / "combined_report.json").string() << "\n";
  return 0;
}

void emit_error(const std::string& command, const std::exception& e) {
  ordered_json err;
  err["error"] = true;
  err["command"] = command;
  err["message"] = e.what();
  std::cerr << err.dump() << "\n";
  std::cerr << "error: " << e.what() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fairness-aware learning-to-defer experiment harness"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  CommonOpts opts;
  std::string model_path, dm_csv_path, report_path;
  std::vector<std::string> report_inputs;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("-c,--config", opts.config_path, "run config JSON")
        ->required();
    cmd->add_option("--seed", opts.seed_override, "override the master seed");
    cmd->add_option("--out", opts.out_override, "override the output directory");
  };

  CLI::App* prepare = app.add_subcommand("prepare-data",
                                         "materialize the train/test datasets");
  add_common(prepare);
  CLI::App* train = app.add_subcommand("train", "train one model");
  add_common(train);
  CLI::App* train_dm = app.add_subcommand("train-dm",
                                          "train the scenario's DM and export "
                                          "its predictions");
  add_common(train_dm);
  CLI::App* sweep = app.add_subcommand("sweep", "hyperparameter sweep with "
                                                "median-of-n aggregation");
  add_common(sweep);
  sweep->add_option("--jobs", opts.jobs, "concurrent sweep settings")
      ->check(CLI::PositiveNumber);
  CLI::App* evaluate = app.add_subcommand("evaluate",
                                          "evaluate a frozen model on the "
                                          "test split");
  add_common(evaluate);
  evaluate->add_option("--model", model_path, "model JSON path")->required();
  evaluate->add_option("--dm-csv", dm_csv_path,
                       "frozen DM predictions CSV (default: rebuild the "
                       "config's DM)");
  CLI::App* pareto = app.add_subcommand("pareto",
                                        "extract the Pareto front of a sweep");
  add_common(pareto);
  pareto->add_option("--report", report_path,
                     "sweep report JSON (default: <out>/report.json)");
  CLI::App* report = app.add_subcommand("report",
                                        "aggregate sweep reports into one "
                                        "document");
  add_common(report);
  report->add_option("--in", report_inputs, "input report JSON paths");

  CLI11_PARSE(app, argc, argv);

  std::string command = app.get_subcommands().front()->get_name();
  try {
    if (prepare->parsed()) return cmd_prepare_data(opts);
    if (train->parsed()) return cmd_train(opts);
    if (train_dm->parsed()) return cmd_train_dm(opts);
    if (sweep->parsed()) return cmd_sweep(opts);
    if (evaluate->parsed()) return cmd_evaluate(opts, model_path, dm_csv_path);
    if (pareto->parsed()) return cmd_pareto(opts, report_path);
    if (report->parsed()) return cmd_report(opts, report_inputs);
  } catch (const std::exception& e) {
    emit_error(command, e);
    return 1;
  }
  return 2;
}
