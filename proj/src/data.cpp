#include "fairdefer/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

namespace fairdefer {

namespace {

std::vector<std::string> parse_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

std::optional<double> parse_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  try {
    size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) return std::nullopt;
    return v;
  } catch (...) {
    return std::nullopt;
  }
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void Dataset::validate() const {
  Eigen::Index nn = n();
  require(nn > 0, "Dataset: empty");
  require(labels.size() == nn, "Dataset: labels length mismatch");
  require(sensitive.size() == nn, "Dataset: sensitive length mismatch");
  for (Eigen::Index i = 0; i < nn; ++i) {
    require(labels[i] == 0.0 || labels[i] == 1.0, "Dataset: labels not in {0,1}");
    require(sensitive[i] == 0 || sensitive[i] == 1,
            "Dataset: sensitive not in {0,1}");
  }
  require(features.allFinite(), "Dataset: non-finite feature value");
  if (dm_side_info) require(dm_side_info->size() == nn, "Dataset: Z length mismatch");
  if (aux_group) require(aux_group->size() == nn, "Dataset: aux length mismatch");
  if (!example_ids.empty())
    require(static_cast<Eigen::Index>(example_ids.size()) == nn,
            "Dataset: id length mismatch");
}

Dataset Dataset::rows(const std::vector<int>& idx) const {
  Dataset out;
  out.features.resize(idx.size(), dim());
  out.labels.resize(idx.size());
  out.sensitive.resize(idx.size());
  if (dm_side_info) out.dm_side_info = IntVector(idx.size());
  if (aux_group) out.aux_group = IntVector(idx.size());
  out.feature_names = feature_names;
  for (size_t k = 0; k < idx.size(); ++k) {
    int i = idx[k];
    require(i >= 0 && i < n(), "Dataset::rows: index out of range");
    out.features.row(k) = features.row(i);
    out.labels[k] = labels[i];
    out.sensitive[k] = sensitive[i];
    if (dm_side_info) (*out.dm_side_info)[k] = (*dm_side_info)[i];
    if (aux_group) (*out.aux_group)[k] = (*aux_group)[i];
    if (!example_ids.empty()) out.example_ids.push_back(example_ids[i]);
  }
  return out;
}

Dataset Dataset::with_side_info_appended() const {
  require(dm_side_info.has_value(),
          "with_side_info_appended: dataset has no side information Z");
  const IntVector& z = *dm_side_info;
  int max_code = z.maxCoeff();
  int extra = max_code <= 1 ? 1 : max_code + 1;  // binary Z stays one column
  Dataset out = *this;
  out.features.resize(n(), dim() + extra);
  out.features.leftCols(dim()) = features;
  out.features.rightCols(extra).setZero();
  for (Eigen::Index i = 0; i < n(); ++i) {
    if (extra == 1)
      out.features(i, dim()) = static_cast<double>(z[i]);
    else
      out.features(i, dim() + z[i]) = 1.0;
  }
  for (int k = 0; k < extra; ++k)
    out.feature_names.push_back("z_" + std::to_string(k));
  return out;
}

void SplitSpec::validate() const {
  require(train_fraction > 0.0 && test_fraction > 0.0,
          "SplitSpec: fractions must be positive");
  require(std::abs(train_fraction + test_fraction - 1.0) < 1e-9,
          "SplitSpec: fractions must sum to 1");
}

std::pair<Dataset, Dataset> split(const Dataset& data, const SplitSpec& spec) {
  spec.validate();
  data.validate();
  require(data.n() >= 10, "split: need at least 10 examples");
  std::mt19937_64 rng(spec.seed);
  std::vector<int> train_idx, test_idx;
  auto assign = [&](std::vector<int>& pool) {
    std::shuffle(pool.begin(), pool.end(), rng);
    auto n_train = static_cast<size_t>(
        std::llround(spec.train_fraction * static_cast<double>(pool.size())));
    train_idx.insert(train_idx.end(), pool.begin(), pool.begin() + n_train);
    test_idx.insert(test_idx.end(), pool.begin() + n_train, pool.end());
  };
  if (spec.stratify_on_label) {
    std::vector<int> pos, neg;
    for (int i = 0; i < data.n(); ++i)
      (data.labels[i] == 1.0 ? pos : neg).push_back(i);
    assign(pos);
    assign(neg);
  } else {
    std::vector<int> all(data.n());
    std::iota(all.begin(), all.end(), 0);
    assign(all);
  }
  require(!train_idx.empty() && !test_idx.empty(), "split: empty split produced");
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());
  return {data.rows(train_idx), data.rows(test_idx)};
}

int RawTable::column_index(const std::string& name) const {
  for (size_t i = 0; i < columns.size(); ++i)
    if (columns[i] == name) return static_cast<int>(i);
  throw Error("missing required column: " + name);
}

RawTable load_csv(const std::filesystem::path& path,
                  const std::vector<std::string>& required_columns) {
  std::ifstream in(path);
  require(in.good(), "load_csv: cannot open " + path.string());
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), "load_csv: no header");
  RawTable table;
  table.columns = parse_csv_line(line);
  for (const auto& col : required_columns) table.column_index(col);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto fields = parse_csv_line(line);
    if (fields.size() != table.columns.size()) {
      ++table.dropped_count;
      continue;
    }
    table.rows.push_back(std::move(fields));
  }
  return table;
}

namespace {

// Shared encoding step: categorical vocabularies and standardization
// constants computed on the train split only.
struct Encoded {
  Dataset train;
  Dataset test;
};

struct RowView {
  std::vector<double> continuous;
  std::vector<std::string> categorical;  // one string per categorical column
  double label = 0.0;
  int sensitive = 0;
  int z = 0;
  int aux = 0;
  std::string id;
};

Encoded encode(const std::vector<RowView>& rows,
               const std::vector<std::string>& cont_names,
               const std::vector<std::string>& cat_names,
               const SplitSpec& split_spec) {
  // Deterministic index split first; everything derived from train only.
  size_t n = rows.size();
  require(n >= 10, "preprocess: fewer than 10 usable rows");
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(split_spec.seed);
  std::shuffle(order.begin(), order.end(), rng);
  auto n_train = static_cast<size_t>(
      std::llround(split_spec.train_fraction * static_cast<double>(n)));
  std::vector<int> train_rows(order.begin(), order.begin() + n_train);
  std::vector<int> test_rows(order.begin() + n_train, order.end());
  std::sort(train_rows.begin(), train_rows.end());
  std::sort(test_rows.begin(), test_rows.end());

  // Categorical vocabularies from the train split; rare or unseen
  // categories map to an explicit "other" bucket.
  constexpr int kMinCategoryCount = 20;
  size_t n_cat = cat_names.size();
  std::vector<std::vector<std::string>> vocab(n_cat);
  for (size_t c = 0; c < n_cat; ++c) {
    std::map<std::string, int> counts;
    for (int r : train_rows) ++counts[rows[r].categorical[c]];
    for (const auto& [cat, cnt] : counts)
      if (cnt >= kMinCategoryCount) vocab[c].push_back(cat);
    std::sort(vocab[c].begin(), vocab[c].end());
  }

  // Standardization constants from the train split.
  size_t n_cont = cont_names.size();
  std::vector<double> mean(n_cont, 0.0), stdev(n_cont, 1.0);
  for (size_t j = 0; j < n_cont; ++j) {
    double sum = 0.0, sq = 0.0;
    for (int r : train_rows) {
      sum += rows[r].continuous[j];
      sq += rows[r].continuous[j] * rows[r].continuous[j];
    }
    double m = sum / train_rows.size();
    double var = sq / train_rows.size() - m * m;
    mean[j] = m;
    stdev[j] = var > 1e-12 ? std::sqrt(var) : 1.0;
  }

  std::vector<std::string> names(cont_names);
  for (size_t c = 0; c < n_cat; ++c) {
    for (const auto& cat : vocab[c]) names.push_back(cat_names[c] + "=" + cat);
    names.push_back(cat_names[c] + "=other");
  }

  auto build = [&](const std::vector<int>& idx) {
    Dataset d;
    d.features.setZero(idx.size(), names.size());
    d.labels.resize(idx.size());
    d.sensitive.resize(idx.size());
    d.dm_side_info = IntVector(idx.size());
    d.aux_group = IntVector(idx.size());
    d.feature_names = names;
    for (size_t k = 0; k < idx.size(); ++k) {
      const RowView& row = rows[idx[k]];
      size_t col = 0;
      for (size_t j = 0; j < n_cont; ++j)
        d.features(k, col++) = (row.continuous[j] - mean[j]) / stdev[j];
      for (size_t c = 0; c < n_cat; ++c) {
        auto it = std::lower_bound(vocab[c].begin(), vocab[c].end(),
                                   row.categorical[c]);
        size_t hit = (it != vocab[c].end() && *it == row.categorical[c])
                         ? static_cast<size_t>(it - vocab[c].begin())
                         : vocab[c].size();  // "other"
        d.features(k, col + hit) = 1.0;
        col += vocab[c].size() + 1;
      }
      d.labels[k] = row.label;
      d.sensitive[k] = row.sensitive;
      (*d.dm_side_info)[k] = row.z;
      (*d.aux_group)[k] = row.aux;
      d.example_ids.push_back(row.id);
    }
    d.validate();
    return d;
  };
  return {build(train_rows), build(test_rows)};
}

}  // namespace

PreparedData preprocess_compas(const RawTable& raw, const SplitSpec& split_spec) {
  int c_age = raw.column_index("age");
  int c_sex = raw.column_index("sex");
  int c_race = raw.column_index("race");
  int c_priors = raw.column_index("priors_count");
  int c_degree = raw.column_index("c_charge_degree");
  int c_desc = raw.column_index("c_charge_desc");
  int c_label = raw.column_index("two_year_recid");
  int c_isrecid = raw.column_index("is_recid");
  int c_violent = raw.column_index("is_violent_recid");
  int c_days = raw.column_index("days_b_screening_arrest");
  int c_id = raw.column_index("id");

  std::vector<RowView> rows;
  for (const auto& r : raw.rows) {
    auto days = parse_double(r[c_days]);
    auto age = parse_double(r[c_age]);
    auto priors = parse_double(r[c_priors]);
    auto label = parse_double(r[c_label]);
    auto isrecid = parse_double(r[c_isrecid]);
    auto violent = parse_double(r[c_violent]);
    if (!days || !age || !priors || !label || !isrecid || !violent) continue;
    // ProPublica analysis filter: charge within 30 days of COMPAS
    // screening, recidivism flag resolved, no ordinary traffic offenses.
    if (*days > 30.0 || *days < -30.0) continue;
    if (*isrecid == -1.0) continue;
    if (r[c_degree] == "O") continue;
    RowView row;
    row.continuous = {*age, *priors};
    row.categorical = {r[c_sex], r[c_degree], r[c_desc]};
    row.label = *label;
    row.sensitive = r[c_race] == "African-American" ? 1 : 0;
    // Z = violently recidivated within the label horizon, so Z=1 => Y=1.
    row.z = (*violent == 1.0 && *label == 1.0) ? 1 : 0;
    row.id = r[c_id];
    rows.push_back(std::move(row));
  }
  PreparedData out;
  out.raw_rows = static_cast<int>(raw.rows.size());
  out.filtered_rows = static_cast<int>(rows.size());
  // aux group: below the mean age, computed on the training split. The
  // split inside encode() uses the same seed and ordering, so compute
  // the train mean the same way here.
  {
    std::vector<int> order(rows.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(split_spec.seed);
    std::shuffle(order.begin(), order.end(), rng);
    auto n_train = static_cast<size_t>(std::llround(
        split_spec.train_fraction * static_cast<double>(rows.size())));
    double mean_age = 0.0;
    for (size_t k = 0; k < n_train; ++k)
      mean_age += rows[order[k]].continuous[0];
    mean_age /= static_cast<double>(n_train);
    for (auto& row : rows) row.aux = row.continuous[0] < mean_age ? 1 : 0;
  }
  Encoded enc = encode(rows, {"age", "priors_count"},
                       {"sex", "c_charge_degree", "c_charge_desc"}, split_spec);
  out.train = std::move(enc.train);
  out.test = std::move(enc.test);
  return out;
}

PreparedData preprocess_health(const RawTable& raw, const SplitSpec& split_spec) {
  int c_age = raw.column_index("age");
  int c_sex = raw.column_index("sex");
  int c_charlson = raw.column_index("charlson_index");
  int c_pcg = raw.column_index("primary_condition_group");
  int c_id = raw.column_index("member_id");
  // Every remaining numeric column is a claims-aggregate covariate.
  std::vector<int> covariate_cols;
  std::vector<std::string> covariate_names;
  for (size_t j = 0; j < raw.columns.size(); ++j) {
    int ji = static_cast<int>(j);
    if (ji == c_age || ji == c_sex || ji == c_charlson || ji == c_pcg ||
        ji == c_id)
      continue;
    covariate_cols.push_back(ji);
    covariate_names.push_back(raw.columns[j]);
  }

  // Condition-group codes indexed over the full table (Z is DM-only
  // side information, not a model feature, so no train/test leakage).
  std::map<std::string, int> pcg_codes;
  for (const auto& r : raw.rows) pcg_codes.emplace(r[c_pcg], 0);
  int next = 0;
  for (auto& [code, idx] : pcg_codes) idx = next++;

  std::vector<RowView> rows;
  for (const auto& r : raw.rows) {
    auto age = parse_double(r[c_age]);
    auto charlson = parse_double(r[c_charlson]);
    if (!age || !charlson) continue;
    RowView row;
    row.continuous = {*age};
    bool ok = true;
    for (int j : covariate_cols) {
      auto v = parse_double(r[j]);
      if (!v) {
        ok = false;
        break;
      }
      row.continuous.push_back(*v);
    }
    if (!ok) continue;
    row.categorical = {r[c_sex]};
    row.label = *charlson > 0.0 ? 1.0 : 0.0;
    row.sensitive = *age >= 70.0 ? 1 : 0;
    row.z = pcg_codes.at(r[c_pcg]);
    row.aux = (r[c_sex] == "M" || r[c_sex] == "male") ? 1 : 0;
    row.id = r[c_id];
    rows.push_back(std::move(row));
  }
  PreparedData out;
  out.raw_rows = static_cast<int>(raw.rows.size());
  out.filtered_rows = static_cast<int>(rows.size());
  std::vector<std::string> cont_names = {"age"};
  cont_names.insert(cont_names.end(), covariate_names.begin(),
                    covariate_names.end());
  Encoded enc = encode(rows, cont_names, {"sex"}, split_spec);
  out.train = std::move(enc.train);
  out.test = std::move(enc.test);
  return out;
}

void SynthSpec::validate() const {
  require(n >= 10, "SynthSpec: n too small");
  for (double p : {group1_rate, aux1_rate, label_rate_group0, label_rate_group1,
                   z_informativeness})
    require(p >= 0.0 && p <= 1.0, "SynthSpec: probability outside [0,1]");
  require(gaussian_dims >= 1, "SynthSpec: need at least one gaussian feature");
}

Dataset synth_generate(const SynthSpec& spec, uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset d;
  int dim = 2 + spec.gaussian_dims;
  d.features.resize(spec.n, dim);
  d.labels.resize(spec.n);
  d.sensitive.resize(spec.n);
  d.dm_side_info = IntVector(spec.n);
  d.aux_group = IntVector(spec.n);
  d.feature_names = {"sensitive", "aux_group"};
  for (int j = 0; j < spec.gaussian_dims; ++j)
    d.feature_names.push_back("x" + std::to_string(j));
  for (int i = 0; i < spec.n; ++i) {
    int a = unif(rng) < spec.group1_rate ? 1 : 0;
    int aux = unif(rng) < spec.aux1_rate ? 1 : 0;
    double label_rate = a == 1 ? spec.label_rate_group1 : spec.label_rate_group0;
    double y = unif(rng) < label_rate ? 1.0 : 0.0;
    d.features(i, 0) = a;
    d.features(i, 1) = aux;
    double class_mean = (y * 2.0 - 1.0) * spec.class_separation / 2.0;
    for (int j = 0; j < spec.gaussian_dims; ++j)
      d.features(i, 2 + j) = class_mean + a * spec.group_shift + normal(rng);
    int z;
    if (unif(rng) < spec.z_informativeness)
      z = static_cast<int>(y);
    else
      z = unif(rng) < 0.5 ? 1 : 0;
    d.labels[i] = y;
    d.sensitive[i] = a;
    (*d.dm_side_info)[i] = z;
    (*d.aux_group)[i] = aux;
    d.example_ids.push_back("s" + std::to_string(i));
  }
  d.validate();
  return d;
}

void save_dataset(const Dataset& data, const std::filesystem::path& dir,
                  uint64_t seed) {
  data.validate();
  std::filesystem::create_directories(dir);
  std::ofstream csv(dir / "features.csv");
  require(csv.good(), "save_dataset: cannot write " + dir.string());
  csv << "example_id,label,sensitive";
  if (data.dm_side_info) csv << ",z";
  if (data.aux_group) csv << ",aux_group";
  for (Eigen::Index j = 0; j < data.dim(); ++j) csv << ",f" << j;
  csv << "\n";
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    std::string id = data.example_ids.empty() ? std::to_string(i)
                                              : data.example_ids[i];
    csv << id << "," << static_cast<int>(data.labels[i]) << ","
        << data.sensitive[i];
    if (data.dm_side_info) csv << "," << (*data.dm_side_info)[i];
    if (data.aux_group) csv << "," << (*data.aux_group)[i];
    for (Eigen::Index j = 0; j < data.dim(); ++j)
      csv << "," << format_double(data.features(i, j));
    csv << "\n";
  }
  nlohmann::ordered_json meta;
  meta["n"] = data.n();
  meta["dim"] = data.dim();
  meta["feature_names"] = data.feature_names;
  meta["has_z"] = data.dm_side_info.has_value();
  meta["has_aux_group"] = data.aux_group.has_value();
  meta["seed"] = seed;
  std::ofstream mj(dir / "meta.json");
  mj << meta.dump(2) << "\n";
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream mj(dir / "meta.json");
  require(mj.good(), "load_dataset: missing meta.json in " + dir.string());
  nlohmann::json meta = nlohmann::json::parse(mj);
  bool has_z = meta.at("has_z").get<bool>();
  bool has_aux = meta.at("has_aux_group").get<bool>();
  int dim = meta.at("dim").get<int>();

  RawTable table = load_csv(dir / "features.csv", {"example_id", "label",
                                                   "sensitive"});
  int n = static_cast<int>(table.rows.size());
  Dataset d;
  d.features.resize(n, dim);
  d.labels.resize(n);
  d.sensitive.resize(n);
  if (has_z) d.dm_side_info = IntVector(n);
  if (has_aux) d.aux_group = IntVector(n);
  d.feature_names = meta.at("feature_names").get<std::vector<std::string>>();
  int col = 3;
  int z_col = -1, aux_col = -1;
  if (has_z) z_col = col++;
  if (has_aux) aux_col = col++;
  for (int i = 0; i < n; ++i) {
    const auto& r = table.rows[i];
    d.example_ids.push_back(r[0]);
    d.labels[i] = std::stod(r[1]);
    d.sensitive[i] = std::stoi(r[2]);
    if (has_z) (*d.dm_side_info)[i] = std::stoi(r[z_col]);
    if (has_aux) (*d.aux_group)[i] = std::stoi(r[aux_col]);
    for (int j = 0; j < dim; ++j) d.features(i, j) = std::stod(r[col + j]);
  }
  d.validate();
  return d;
}

}  // namespace fairdefer
