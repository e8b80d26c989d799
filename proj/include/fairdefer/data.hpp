#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fairdefer/types.hpp"

namespace fairdefer {

/// Feature matrix with binary labels Y, binary sensitive attribute A,
/// optional DM-only side information Z and optional binary auxiliary
/// (DM-reliability) group.
struct Dataset {
  Matrix features;                      // n x d
  Vector labels;                        // Y in {0,1}
  IntVector sensitive;                  // A in {0,1}
  std::optional<IntVector> dm_side_info;  // Z; DM-only view
  std::optional<IntVector> aux_group;     // reliability attribute
  std::vector<std::string> example_ids;
  std::vector<std::string> feature_names;

  Eigen::Index n() const { return features.rows(); }
  Eigen::Index dim() const { return features.cols(); }
  void validate() const;
  Dataset rows(const std::vector<int>& idx) const;
  /// DM view: Z appended as a one-hot (or single) feature block.
  Dataset with_side_info_appended() const;
};

struct SplitSpec {
  double train_fraction = 0.8;
  double test_fraction = 0.2;
  uint64_t seed = 0;
  bool stratify_on_label = false;

  void validate() const;
};

std::pair<Dataset, Dataset> split(const Dataset& data, const SplitSpec& spec);

/// Typed CSV table; rows with unparseable required fields are dropped
/// and counted.
struct RawTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
  int dropped_count = 0;

  int column_index(const std::string& name) const;
};

RawTable load_csv(const std::filesystem::path& path,
                  const std::vector<std::string>& required_columns);

/// COMPAS preprocessing output: train/test datasets (continuous
/// covariates standardized with train statistics only) plus row
/// accounting for reproduction reports.
struct PreparedData {
  Dataset train;
  Dataset test;
  int raw_rows = 0;
  int filtered_rows = 0;
};

/// ProPublica two-year recidivism export. Y = two_year_recid,
/// A = race black/non-black, Z = violent recidivism bit. Applies the
/// standard ProPublica filter (screening window, is_recid != -1,
/// ordinary-traffic charges excluded). aux_group = below train-mean age.
PreparedData preprocess_compas(const RawTable& raw, const SplitSpec& split_spec);

/// Heritage Health schema: member-level rows with age, charlson_index,
/// primary_condition_group and numeric claim-aggregate columns.
/// Y = Charlson > 0, A = age >= 70, Z = condition group code,
/// aux_group = sex male.
PreparedData preprocess_health(const RawTable& raw, const SplitSpec& split_spec);

/// Synthetic generator covering all three DM scenarios without external
/// downloads. Features: [A, aux_group, gaussians...]; Z reveals Y with
/// probability z_informativeness, else is an independent coin.
struct SynthSpec {
  int n = 4000;
  double group1_rate = 0.5;          // P(A=1)
  double aux1_rate = 0.5;            // P(aux_group=1)
  double label_rate_group0 = 0.5;    // P(Y=1 | A=0)
  double label_rate_group1 = 0.5;
  int gaussian_dims = 4;
  double class_separation = 1.2;     // distance between class means
  double group_shift = 0.4;          // feature shift for A=1
  double z_informativeness = 0.8;

  void validate() const;
};

Dataset synth_generate(const SynthSpec& spec, uint64_t seed);

/// Canonical serialized form: directory with features.csv + meta.json,
/// byte-exact reload.
void save_dataset(const Dataset& data, const std::filesystem::path& dir,
                  uint64_t seed);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace fairdefer
