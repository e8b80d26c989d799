#include "fairdefer/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace fairdefer {

const char* dataset_kind_name(DatasetKind k) {
  switch (k) {
    case DatasetKind::synthetic: return "synthetic";
    case DatasetKind::compas: return "compas";
    case DatasetKind::health: return "health";
    case DatasetKind::saved: return "saved";
  }
  return "?";
}

DatasetKind dataset_kind_from_name(const std::string& name) {
  using K = DatasetKind;
  for (K k : {K::synthetic, K::compas, K::health, K::saved})
    if (name == dataset_kind_name(k)) return k;
  throw Error("unknown dataset kind: " + name);
}

void RunConfig::validate() const {
  require(hidden_units >= 1, "config: hidden_units must be >= 1");
  require(runs_per_setting >= 1, "config: runs_per_setting must be >= 1");
  require(!sweep_alpha_fair.empty() && !sweep_gamma.empty(),
          "config: sweep grids must be non-empty");
  require(dataset.train_fraction > 0.0 && dataset.train_fraction < 1.0,
          "config: dataset.train_fraction must be in (0,1)");
  loss.validate();
  train.validate();
  dm.corruption.validate();
  require(dm.constant_loss_alpha <= 0.0,
          "config: dm.constant_loss_alpha must be <= 0");
  if (dataset.kind != DatasetKind::synthetic) {
    require(!dataset.path.empty(), "config: dataset.path is required for kind " +
                                       std::string(dataset_kind_name(dataset.kind)));
    require(std::filesystem::exists(dataset.path),
            "config: dataset.path does not exist: " + dataset.path.string());
  } else {
    dataset.synth.validate();
  }
}

namespace {

using json = nlohmann::json;

// Reject keys outside the allowed set, naming the first offender with
// its object path.
void check_keys(const json& obj, const std::string& where,
                const std::set<std::string>& allowed) {
  for (const auto& [key, value] : obj.items())
    if (!allowed.count(key))
      throw Error("config: unknown key \"" +
                  (where.empty() ? key : where + "." + key) + "\"");
}

template <typename T>
void maybe(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

}  // namespace

RunConfig parse_config_json(const json& j) {
  require(j.is_object(), "config: document must be a JSON object");
  check_keys(j, "", {"seed", "output_dir", "dataset", "model", "dm", "sweep",
                     "bins"});

  std::vector<std::string> missing;
  if (!j.contains("seed")) missing.push_back("seed");
  if (j.contains("dataset") && !j.at("dataset").contains("kind"))
    missing.push_back("dataset.kind");
  if (!missing.empty()) {
    std::ostringstream msg;
    msg << "config: missing mandatory field(s):";
    for (const auto& m : missing) msg << " " << m;
    throw Error(msg.str());
  }

  RunConfig c;
  c.seed = j.at("seed").get<uint64_t>();
  if (j.contains("output_dir"))
    c.output_dir = j.at("output_dir").get<std::string>();

  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    check_keys(d, "dataset", {"kind", "path", "train_fraction", "synthetic"});
    c.dataset.kind = dataset_kind_from_name(d.at("kind").get<std::string>());
    if (d.contains("path")) c.dataset.path = d.at("path").get<std::string>();
    maybe(d, "train_fraction", c.dataset.train_fraction);
    if (d.contains("synthetic")) {
      const json& s = d.at("synthetic");
      check_keys(s, "dataset.synthetic",
                 {"n", "group1_rate", "aux1_rate", "label_rate_group0",
                  "label_rate_group1", "gaussian_dims", "class_separation",
                  "group_shift", "z_informativeness"});
      maybe(s, "n", c.dataset.synth.n);
      maybe(s, "group1_rate", c.dataset.synth.group1_rate);
      maybe(s, "aux1_rate", c.dataset.synth.aux1_rate);
      maybe(s, "label_rate_group0", c.dataset.synth.label_rate_group0);
      maybe(s, "label_rate_group1", c.dataset.synth.label_rate_group1);
      maybe(s, "gaussian_dims", c.dataset.synth.gaussian_dims);
      maybe(s, "class_separation", c.dataset.synth.class_separation);
      maybe(s, "group_shift", c.dataset.synth.group_shift);
      maybe(s, "z_informativeness", c.dataset.synth.z_informativeness);
    }
  }

  if (j.contains("model")) {
    const json& m = j.at("model");
    check_keys(m, "model", {"family", "hidden_units", "loss", "train"});
    if (m.contains("family"))
      c.family = model_family_from_name(m.at("family").get<std::string>());
    maybe(m, "hidden_units", c.hidden_units);
    if (m.contains("loss")) {
      const json& l = m.at("loss");
      check_keys(l, "model.loss",
                 {"kind", "alpha_fair", "gamma", "temperature", "sampled_gate",
                  "stop_gradient_through_model", "di_form"});
      if (l.contains("kind")) {
        using K = LossSpec::Kind;
        std::string name = l.at("kind").get<std::string>();
        bool found = false;
        for (K k : {K::fair_binary, K::reject, K::defer, K::punt, K::fair_punt})
          if (name == LossSpec::kind_name(k)) {
            c.loss.kind = k;
            found = true;
          }
        require(found, "config: unknown loss kind: " + name);
      }
      maybe(l, "alpha_fair", c.loss.alpha_fair);
      maybe(l, "gamma", c.loss.gamma);
      maybe(l, "temperature", c.loss.temperature);
      maybe(l, "sampled_gate", c.loss.sampled_gate);
      maybe(l, "stop_gradient_through_model",
            c.loss.stop_gradient_through_model);
      if (l.contains("di_form")) {
        std::string form = l.at("di_form").get<std::string>();
        if (form == "squared_expected")
          c.loss.di_form = LossSpec::DiForm::squared_expected;
        else if (form == "soft_mean")
          c.loss.di_form = LossSpec::DiForm::soft_mean;
        else
          throw Error("config: unknown di_form: " + form);
      }
    }
    if (m.contains("train")) {
      const json& t = m.at("train");
      check_keys(t, "model.train",
                 {"patience_epochs", "max_epochs", "validation_fraction",
                  "batch_size", "learning_rate"});
      maybe(t, "patience_epochs", c.train.patience_epochs);
      maybe(t, "max_epochs", c.train.max_epochs);
      maybe(t, "validation_fraction", c.train.validation_fraction);
      maybe(t, "batch_size", c.train.batch_size);
      maybe(t, "learning_rate", c.train.learning_rate);
    }
  }

  if (j.contains("dm")) {
    const json& d = j.at("dm");
    check_keys(d, "dm",
               {"scenario", "flip_prob", "aux_value", "constant_loss_alpha"});
    if (d.contains("scenario"))
      c.dm.scenario = dm_scenario_from_name(d.at("scenario").get<std::string>());
    maybe(d, "flip_prob", c.dm.corruption.flip_prob);
    maybe(d, "aux_value", c.dm.corruption.aux_value);
    maybe(d, "constant_loss_alpha", c.dm.constant_loss_alpha);
  }

  if (j.contains("sweep")) {
    const json& s = j.at("sweep");
    check_keys(s, "sweep", {"alpha_fair", "gamma", "runs_per_setting"});
    if (s.contains("alpha_fair"))
      c.sweep_alpha_fair = s.at("alpha_fair").get<std::vector<double>>();
    if (s.contains("gamma"))
      c.sweep_gamma = s.at("gamma").get<std::vector<double>>();
    maybe(s, "runs_per_setting", c.runs_per_setting);
  }

  if (j.contains("bins")) {
    c.bins.clear();
    for (const auto& b : j.at("bins")) {
      require(b.is_array() && b.size() == 2,
              "config: each bin must be a [lo, hi] pair");
      c.bins.emplace_back(b[0].get<double>(), b[1].get<double>());
    }
  }

  // The train seed always follows the master seed.
  c.train.seed = c.seed;
  c.dm.corruption.seed = c.seed;
  c.validate();
  return c;
}

RunConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), "config: cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error("config: invalid JSON in " + path.string() + ": " + e.what());
  }
  return parse_config_json(j);
}

nlohmann::ordered_json effective_config_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir.string();
  nlohmann::ordered_json d;
  d["kind"] = dataset_kind_name(c.dataset.kind);
  d["path"] = c.dataset.path.string();
  d["train_fraction"] = c.dataset.train_fraction;
  if (c.dataset.kind == DatasetKind::synthetic) {
    nlohmann::ordered_json s;
    s["n"] = c.dataset.synth.n;
    s["group1_rate"] = c.dataset.synth.group1_rate;
    s["aux1_rate"] = c.dataset.synth.aux1_rate;
    s["label_rate_group0"] = c.dataset.synth.label_rate_group0;
    s["label_rate_group1"] = c.dataset.synth.label_rate_group1;
    s["gaussian_dims"] = c.dataset.synth.gaussian_dims;
    s["class_separation"] = c.dataset.synth.class_separation;
    s["group_shift"] = c.dataset.synth.group_shift;
    s["z_informativeness"] = c.dataset.synth.z_informativeness;
    d["synthetic"] = std::move(s);
  }
  j["dataset"] = std::move(d);
  nlohmann::ordered_json m;
  m["family"] = model_family_name(c.family);
  m["hidden_units"] = c.hidden_units;
  {
    nlohmann::ordered_json l;
    l["kind"] = LossSpec::kind_name(c.loss.kind);
    l["alpha_fair"] = c.loss.alpha_fair;
    l["gamma"] = c.loss.gamma;
    l["temperature"] = c.loss.temperature;
    l["sampled_gate"] = c.loss.sampled_gate;
    l["stop_gradient_through_model"] = c.loss.stop_gradient_through_model;
    l["di_form"] = c.loss.di_form == LossSpec::DiForm::squared_expected
                       ? "squared_expected"
                       : "soft_mean";
    m["loss"] = std::move(l);
  }
  {
    nlohmann::ordered_json t;
    t["patience_epochs"] = c.train.patience_epochs;
    t["max_epochs"] = c.train.max_epochs;
    t["validation_fraction"] = c.train.validation_fraction;
    t["batch_size"] = c.train.batch_size;
    t["learning_rate"] = c.train.learning_rate;
    m["train"] = std::move(t);
  }
  j["model"] = std::move(m);
  nlohmann::ordered_json dj;
  dj["scenario"] = dm_scenario_name(c.dm.scenario);
  dj["flip_prob"] = c.dm.corruption.flip_prob;
  dj["aux_value"] = c.dm.corruption.aux_value;
  dj["constant_loss_alpha"] = c.dm.constant_loss_alpha;
  j["dm"] = std::move(dj);
  nlohmann::ordered_json sj;
  sj["alpha_fair"] = c.sweep_alpha_fair;
  sj["gamma"] = c.sweep_gamma;
  sj["runs_per_setting"] = c.runs_per_setting;
  j["sweep"] = std::move(sj);
  nlohmann::ordered_json bins = nlohmann::ordered_json::array();
  for (const auto& [lo, hi] : c.bins) bins.push_back({lo, hi});
  j["bins"] = std::move(bins);
  return j;
}

std::pair<Dataset, Dataset> load_config_dataset(const RunConfig& config) {
  SplitSpec ss;
  ss.train_fraction = config.dataset.train_fraction;
  ss.test_fraction = 1.0 - config.dataset.train_fraction;
  ss.seed = config.seed;
  switch (config.dataset.kind) {
    case DatasetKind::synthetic: {
      Dataset all = synth_generate(config.dataset.synth, config.seed);
      ss.stratify_on_label = true;
      return split(all, ss);
    }
    case DatasetKind::compas: {
      RawTable raw = load_csv(config.dataset.path,
                              {"id", "age", "sex", "race", "priors_count",
                               "c_charge_degree", "c_charge_desc",
                               "two_year_recid", "is_recid", "is_violent_recid",
                               "days_b_screening_arrest"});
      PreparedData prep = preprocess_compas(raw, ss);
      return {std::move(prep.train), std::move(prep.test)};
    }
    case DatasetKind::health: {
      RawTable raw = load_csv(config.dataset.path,
                              {"member_id", "age", "sex", "charlson_index",
                               "primary_condition_group"});
      PreparedData prep = preprocess_health(raw, ss);
      return {std::move(prep.train), std::move(prep.test)};
    }
    case DatasetKind::saved: {
      Dataset all = load_dataset(config.dataset.path);
      ss.stratify_on_label = true;
      return split(all, ss);
    }
  }
  throw Error("config: unreachable dataset kind");
}

}  // namespace fairdefer
