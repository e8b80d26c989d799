#include "fairdefer/serialize.hpp"

#include <fstream>

namespace fairdefer {

namespace {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

ojson vector_to_json(const Vector& v) {
  ojson arr = ojson::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

Vector vector_from_json(const json& j) {
  Vector v(j.size());
  for (size_t i = 0; i < j.size(); ++i) v[i] = j[i].get<double>();
  return v;
}

ojson matrix_to_json(const Matrix& m) {
  ojson arr = ojson::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    ojson row = ojson::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    arr.push_back(std::move(row));
  }
  return arr;
}

Matrix matrix_from_json(const json& j, Eigen::Index cols_hint) {
  Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  Eigen::Index cols = rows > 0 ? static_cast<Eigen::Index>(j[0].size()) : cols_hint;
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    require(static_cast<Eigen::Index>(j[i].size()) == cols,
            "model JSON: ragged matrix");
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = j[i][c].get<double>();
  }
  return m;
}

LossSpec::Kind loss_kind_from_name(const std::string& name) {
  using K = LossSpec::Kind;
  for (K k : {K::fair_binary, K::reject, K::defer, K::punt, K::fair_punt})
    if (name == LossSpec::kind_name(k)) return k;
  throw Error("unknown loss kind: " + name);
}

}  // namespace

ojson loss_spec_to_json(const LossSpec& spec) {
  ojson j;
  j["kind"] = LossSpec::kind_name(spec.kind);
  j["alpha_fair"] = spec.alpha_fair;
  j["gamma"] = spec.gamma;
  j["temperature"] = spec.temperature;
  j["sampled_gate"] = spec.sampled_gate;
  j["stop_gradient_through_model"] = spec.stop_gradient_through_model;
  j["di_form"] = spec.di_form == LossSpec::DiForm::squared_expected
                     ? "squared_expected"
                     : "soft_mean";
  return j;
}

LossSpec loss_spec_from_json(const json& j) {
  LossSpec spec;
  spec.kind = loss_kind_from_name(j.at("kind").get<std::string>());
  spec.alpha_fair = j.at("alpha_fair").get<double>();
  spec.gamma = j.at("gamma").get<double>();
  spec.temperature = j.at("temperature").get<double>();
  spec.sampled_gate = j.at("sampled_gate").get<bool>();
  spec.stop_gradient_through_model =
      j.at("stop_gradient_through_model").get<bool>();
  std::string form = j.at("di_form").get<std::string>();
  if (form == "squared_expected")
    spec.di_form = LossSpec::DiForm::squared_expected;
  else if (form == "soft_mean")
    spec.di_form = LossSpec::DiForm::soft_mean;
  else
    throw Error("unknown di_form: " + form);
  spec.validate();
  return spec;
}

ojson metrics_to_json(const MetricsRecord& m) {
  ojson j;
  j["error_rate"] = m.error_rate;
  j["di"] = m.di;
  j["di_fp_component"] = m.di_fp_component;
  j["di_fn_component"] = m.di_fn_component;
  j["di_defined"] = m.di_defined;
  j["deferral_rate"] = m.deferral_rate;
  j["per_group_deferral0"] = m.per_group_deferral0;
  j["per_group_deferral1"] = m.per_group_deferral1;
  ojson sub = ojson::array();
  for (const auto& [key, acc] : m.subgroup_accuracy) {
    ojson e;
    e["sensitive"] = key.first;
    e["aux"] = key.second;
    e["accuracy"] = acc;
    sub.push_back(std::move(e));
  }
  j["subgroup_accuracy"] = std::move(sub);
  j["min_subgroup_accuracy"] = m.min_subgroup_accuracy;
  j["msa_defined"] = m.msa_defined;
  return j;
}

MetricsRecord metrics_from_json(const json& j) {
  MetricsRecord m;
  m.error_rate = j.at("error_rate").get<double>();
  m.di = j.at("di").get<double>();
  m.di_fp_component = j.at("di_fp_component").get<double>();
  m.di_fn_component = j.at("di_fn_component").get<double>();
  m.di_defined = j.at("di_defined").get<bool>();
  m.deferral_rate = j.at("deferral_rate").get<double>();
  m.per_group_deferral0 = j.at("per_group_deferral0").get<double>();
  m.per_group_deferral1 = j.at("per_group_deferral1").get<double>();
  for (const auto& e : j.at("subgroup_accuracy"))
    m.subgroup_accuracy[{e.at("sensitive").get<int>(), e.at("aux").get<int>()}] =
        e.at("accuracy").get<double>();
  m.min_subgroup_accuracy = j.at("min_subgroup_accuracy").get<double>();
  m.msa_defined = j.at("msa_defined").get<bool>();
  return m;
}

ojson threshold_set_to_json(const ThresholdSet& ts) {
  ojson arr = ojson::array();
  for (const auto& band : ts.groups) {
    ojson b;
    b["t0"] = band.t0;
    b["t1"] = band.t1;
    arr.push_back(std::move(b));
  }
  return arr;
}

ThresholdSet threshold_set_from_json(const json& j) {
  ThresholdSet ts;
  for (const auto& b : j)
    ts.groups.push_back({b.at("t0").get<double>(), b.at("t1").get<double>()});
  ts.validate();
  return ts;
}

ojson model_params_to_json(const ModelParams& p) {
  p.validate();
  ojson j;
  j["input_dim"] = p.input_dim;
  j["hidden_units"] = p.hidden_units;
  j["head_kind"] = head_kind_name(p.head_kind);
  j["hidden_weights"] = matrix_to_json(p.hidden_weights);
  j["hidden_bias"] = vector_to_json(p.hidden_bias);
  j["head_weights"] = matrix_to_json(p.head_weights);
  j["head_bias"] = vector_to_json(p.head_bias);
  ojson thr = ojson::array();
  for (const auto& tp : p.threshold_params) {
    ojson t;
    t["t0"] = tp[0];
    t["gap_raw"] = tp[1];
    thr.push_back(std::move(t));
  }
  j["threshold_params"] = std::move(thr);
  return j;
}

ModelParams model_params_from_json(const json& j) {
  ModelParams p;
  p.input_dim = j.at("input_dim").get<int>();
  p.hidden_units = j.at("hidden_units").get<int>();
  p.head_kind = head_kind_from_name(j.at("head_kind").get<std::string>());
  p.hidden_weights = matrix_from_json(j.at("hidden_weights"), p.input_dim);
  p.hidden_bias = vector_from_json(j.at("hidden_bias"));
  p.head_weights = matrix_from_json(j.at("head_weights"), p.hidden_units);
  p.head_bias = vector_from_json(j.at("head_bias"));
  for (const auto& t : j.at("threshold_params"))
    p.threshold_params.push_back(
        Eigen::Vector2d(t.at("t0").get<double>(), t.at("gap_raw").get<double>()));
  p.validate();
  return p;
}

void save_model(const SavedModel& model, const std::filesystem::path& path) {
  ojson j;
  j["format"] = "fairdefer-model-v1";
  j["seed"] = model.seed;
  j["loss"] = loss_spec_to_json(model.spec);
  j["model"] = model_params_to_json(model.params);
  if (model.posthoc_thresholds)
    j["posthoc_thresholds"] = threshold_set_to_json(*model.posthoc_thresholds);
  std::ofstream out(path);
  require(out.good(), "save_model: cannot write " + path.string());
  out << j.dump(2) << "\n";
}

SavedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), "load_model: cannot open " + path.string());
  json j = json::parse(in);
  require(j.at("format").get<std::string>() == "fairdefer-model-v1",
          "load_model: unrecognized format tag");
  SavedModel m;
  m.seed = j.at("seed").get<uint64_t>();
  m.spec = loss_spec_from_json(j.at("loss"));
  m.params = model_params_from_json(j.at("model"));
  if (j.contains("posthoc_thresholds"))
    m.posthoc_thresholds = threshold_set_from_json(j.at("posthoc_thresholds"));
  return m;
}

}  // namespace fairdefer
