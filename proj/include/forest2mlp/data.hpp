#pragma once

// Tabular datasets and the preprocessing flow that feeds the teacher:
// mean imputation, PCA rotation, and stratified cross-validation folds.

#include "forest2mlp/common.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

namespace forest2mlp {

enum class FeatureKind { numeric, categorical };

using MissingMask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// A labelled table. Missing cells hold NaN and are flagged in
/// `missing_mask`; categorical source columns are already one-hot expanded,
/// so `feature_kinds` describes the expanded columns.
struct Dataset {
  std::string name;
  Matrix features;
  MissingMask missing_mask;
  Labels labels;
  std::vector<FeatureKind> feature_kinds;
  std::vector<std::string> column_names;
  std::vector<std::string> class_names;
  int class_count = 0;

  Eigen::Index rows() const { return features.rows(); }
  Eigen::Index cols() const { return features.cols(); }

  void validate() const {
    require(features.rows() >= 1, "dataset '" + name + "' has no rows");
    require(features.cols() >= 1, "dataset '" + name + "' has no features");
    require(class_count >= 2, "dataset '" + name + "' needs at least 2 classes");
    require(static_cast<Eigen::Index>(labels.size()) == features.rows(),
            "label count does not match row count");
    require(static_cast<Eigen::Index>(feature_kinds.size()) == features.cols(),
            "feature kind count does not match column count");
    require(missing_mask.rows() == features.rows() &&
                missing_mask.cols() == features.cols(),
            "missing mask shape mismatch");
    for (int y : labels)
      require(y >= 0 && y < class_count, "label out of range");
    for (Eigen::Index i = 0; i < features.rows(); ++i)
      for (Eigen::Index j = 0; j < features.cols(); ++j)
        require(missing_mask(i, j) == std::isnan(features(i, j)),
                "missing mask disagrees with NaN sentinel");
  }
};

inline MissingMask mask_of(const Matrix& x) { return x.array().isNaN(); }

/// Build a dataset from an all-numeric matrix. Used by generators and tests.
inline Dataset make_dataset(std::string name, Matrix features, Labels labels,
                            int class_count = 0) {
  Dataset ds;
  ds.name = std::move(name);
  ds.missing_mask = mask_of(features);
  ds.features = std::move(features);
  ds.labels = std::move(labels);
  ds.class_count = class_count > 0
                       ? class_count
                       : (ds.labels.empty()
                              ? 0
                              : *std::max_element(ds.labels.begin(),
                                                  ds.labels.end()) + 1);
  ds.feature_kinds.assign(static_cast<std::size_t>(ds.features.cols()),
                          FeatureKind::numeric);
  for (Eigen::Index j = 0; j < ds.features.cols(); ++j)
    ds.column_names.push_back("x" + std::to_string(j));
  for (int c = 0; c < ds.class_count; ++c)
    ds.class_names.push_back(std::to_string(c));
  return ds;
}

// ---------------------------------------------------------------------------
// Delimited text loading

struct TableSchema {
  std::optional<std::string> label_column;  // last column when unset
  std::set<std::string> categorical;        // forced categorical
  std::set<std::string> numeric;            // forced numeric
  char delimiter = ',';
};

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline std::vector<std::string> split_row(const std::string& line,
                                          char delimiter) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cell += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cell += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == delimiter) {
      cells.push_back(trim(cell));
      cell.clear();
    } else {
      cell += c;
    }
  }
  cells.push_back(trim(cell));
  return cells;
}

inline bool is_missing_cell(const std::string& cell) {
  return cell.empty() || cell == "?";
}

}  // namespace detail

/// Parses a header-first delimited file. Empty cells and "?" are missing;
/// numeric-looking columns stay numeric unless overridden; everything else is
/// one-hot encoded with levels in first-appearance order. Labels are
/// factorized in first-appearance order.
inline Dataset load_table(const std::string& path,
                          const TableSchema& schema = {}) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read dataset file: " + path);

  std::string line;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    if (!detail::trim(line).empty()) {
      header = detail::split_row(line, schema.delimiter);
      break;
    }
  }
  if (header.empty()) throw Error("dataset file has no header: " + path);

  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    auto cells = detail::split_row(line, schema.delimiter);
    if (cells.size() != header.size())
      throw Error(path + ": row " + std::to_string(rows.size() + 1) + " has " +
                  std::to_string(cells.size()) + " cells, expected " +
                  std::to_string(header.size()));
    rows.push_back(std::move(cells));
  }
  if (rows.empty()) throw Error("dataset file has zero rows: " + path);

  std::size_t label_col = header.size() - 1;
  if (schema.label_column) {
    auto it = std::find(header.begin(), header.end(), *schema.label_column);
    if (it == header.end())
      throw Error(path + ": label column '" + *schema.label_column +
                  "' not found");
    label_col = static_cast<std::size_t>(it - header.begin());
  }
  require(header.size() >= 2, path + ": need at least one feature column");

  Dataset ds;
  ds.name = path;
  const std::size_t n = rows.size();

  std::unordered_map<std::string, int> class_index;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string& cell = rows[i][label_col];
    if (detail::is_missing_cell(cell))
      throw Error(path + ": missing label in row " + std::to_string(i + 1));
    auto [it, inserted] =
        class_index.emplace(cell, static_cast<int>(class_index.size()));
    if (inserted) ds.class_names.push_back(cell);
    ds.labels.push_back(it->second);
  }
  ds.class_count = static_cast<int>(class_index.size());
  if (ds.class_count < 2)
    throw Error(path + ": label column has a single class");

  // Expanded columns are gathered column-major, then packed into the matrix.
  std::vector<std::vector<double>> columns;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c == label_col) continue;
    const std::string& name = header[c];
    bool numeric;
    if (schema.categorical.count(name)) {
      numeric = false;
    } else if (schema.numeric.count(name)) {
      numeric = true;
    } else {
      numeric = true;
      double v;
      for (std::size_t i = 0; i < n && numeric; ++i)
        if (!detail::is_missing_cell(rows[i][c]) && !parse_double(rows[i][c], v))
          numeric = false;
    }

    if (numeric) {
      std::vector<double> col(n);
      for (std::size_t i = 0; i < n; ++i) {
        const std::string& cell = rows[i][c];
        if (detail::is_missing_cell(cell)) {
          col[i] = kMissing;
        } else if (!parse_double(cell, col[i])) {
          throw Error(path + ": non-numeric value '" + cell + "' in column '" +
                      name + "'");
        }
      }
      columns.push_back(std::move(col));
      ds.column_names.push_back(name);
      ds.feature_kinds.push_back(FeatureKind::numeric);
    } else {
      std::vector<std::string> levels;
      std::unordered_map<std::string, std::size_t> level_index;
      for (std::size_t i = 0; i < n; ++i) {
        const std::string& cell = rows[i][c];
        if (detail::is_missing_cell(cell)) continue;
        if (level_index.emplace(cell, levels.size()).second)
          levels.push_back(cell);
      }
      for (std::size_t l = 0; l < levels.size(); ++l) {
        std::vector<double> col(n);
        for (std::size_t i = 0; i < n; ++i) {
          const std::string& cell = rows[i][c];
          col[i] = detail::is_missing_cell(cell)
                       ? kMissing
                       : (level_index.at(cell) == l ? 1.0 : 0.0);
        }
        columns.push_back(std::move(col));
        ds.column_names.push_back(name + "=" + levels[l]);
        ds.feature_kinds.push_back(FeatureKind::categorical);
      }
    }
  }
  require(!columns.empty(), path + ": no usable feature columns");

  ds.features.resize(static_cast<Eigen::Index>(n),
                     static_cast<Eigen::Index>(columns.size()));
  for (std::size_t j = 0; j < columns.size(); ++j)
    for (std::size_t i = 0; i < n; ++i) ds.features(i, j) = columns[j][i];
  ds.missing_mask = mask_of(ds.features);
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// Mean imputation

/// Per-column means over non-missing training cells. An all-missing column
/// falls back to 0.0 and is reported through the warning sink.
struct MeanImputer {
  Vector means;
  std::vector<int> degenerate_columns;

  static MeanImputer fit(const Matrix& x) {
    MeanImputer imp;
    imp.means.resize(x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      double sum = 0.0;
      Eigen::Index count = 0;
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        if (!std::isnan(x(i, j))) {
          sum += x(i, j);
          ++count;
        }
      }
      if (count == 0) {
        imp.means[j] = 0.0;
        imp.degenerate_columns.push_back(static_cast<int>(j));
        warn("column " + std::to_string(j) +
             " has no observed values; imputing 0.0");
      } else {
        imp.means[j] = sum / static_cast<double>(count);
      }
    }
    return imp;
  }

  Matrix apply(const Matrix& x) const {
    require(x.cols() == means.size(), "imputer: column count mismatch");
    Matrix out = x;
    for (Eigen::Index j = 0; j < out.cols(); ++j)
      for (Eigen::Index i = 0; i < out.rows(); ++i)
        if (std::isnan(out(i, j))) out(i, j) = means[j];
    return out;
  }
};

inline Dataset impute_mean(const Dataset& ds) {
  Dataset out = ds;
  out.features = MeanImputer::fit(ds.features).apply(ds.features);
  out.missing_mask = MissingMask::Constant(ds.rows(), ds.cols(), false);
  return out;
}

// ---------------------------------------------------------------------------
// PCA

struct PcaModel {
  Vector mean;
  Matrix components;  // k x d, orthonormal rows
  Vector explained_variance;

  Eigen::Index input_dim() const { return mean.size(); }
  Eigen::Index output_dim() const { return components.rows(); }
};

/// Fits PCA through the SVD of the centered data. `k = 0` keeps all d
/// components. Each component's largest-magnitude entry is made positive.
inline PcaModel fit_pca(const Matrix& x, Eigen::Index k = 0) {
  const Eigen::Index n = x.rows(), d = x.cols();
  require(n >= 2, "fit_pca: need at least 2 rows");
  require(!x.hasNaN(), "fit_pca: input has missing values");
  if (k == 0) k = d;
  require(k >= 1 && k <= d, "fit_pca: component count must be in [1, d]");

  PcaModel model;
  model.mean = x.colwise().mean().transpose();
  Matrix centered = x.rowwise() - model.mean.transpose();
  Eigen::JacobiSVD<Matrix> svd(centered, Eigen::ComputeFullV);
  const Vector& s = svd.singularValues();
  const Matrix& v = svd.matrixV();

  model.components.resize(k, d);
  model.explained_variance.resize(k);
  for (Eigen::Index c = 0; c < k; ++c) {
    Eigen::Index pivot;
    v.col(c).cwiseAbs().maxCoeff(&pivot);
    const double sign = v(pivot, c) < 0 ? -1.0 : 1.0;
    model.components.row(c) = sign * v.col(c).transpose();
    const double sv = c < s.size() ? s[c] : 0.0;
    model.explained_variance[c] = sv * sv / static_cast<double>(n - 1);
  }
  return model;
}

inline Matrix transform_pca(const PcaModel& model, const Matrix& x) {
  require(x.cols() == model.input_dim(),
          "transform_pca: expected " + std::to_string(model.input_dim()) +
              " columns, got " + std::to_string(x.cols()));
  return (x.rowwise() - model.mean.transpose()) * model.components.transpose();
}

inline Matrix inverse_transform_pca(const PcaModel& model, const Matrix& z) {
  require(z.cols() == model.output_dim(), "inverse_transform_pca: bad width");
  return (z * model.components).rowwise() + model.mean.transpose();
}

// ---------------------------------------------------------------------------
// Standardization (student inputs only)

struct Standardizer {
  Vector mean;
  Vector scale;

  static Standardizer fit(const Matrix& x) {
    Standardizer s;
    s.mean = x.colwise().mean().transpose();
    s.scale.resize(x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double var =
          (x.col(j).array() - s.mean[j]).square().mean();
      s.scale[j] = var > 0.0 ? std::sqrt(var) : 1.0;
    }
    return s;
  }

  Matrix apply(const Matrix& x) const {
    require(x.cols() == mean.size(), "standardizer: column count mismatch");
    return (x.rowwise() - mean.transpose()).array().rowwise() /
           scale.transpose().array();
  }
};

// ---------------------------------------------------------------------------
// Cross-validation folds

struct FoldPlan {
  std::vector<int> fold_of;
  int k = 0;

  IndexList test_indices(int fold) const {
    IndexList out;
    for (std::size_t i = 0; i < fold_of.size(); ++i)
      if (fold_of[i] == fold) out.push_back(static_cast<int>(i));
    return out;
  }

  IndexList train_indices(int fold) const {
    IndexList out;
    for (std::size_t i = 0; i < fold_of.size(); ++i)
      if (fold_of[i] != fold) out.push_back(static_cast<int>(i));
    return out;
  }
};

/// Shuffles each class independently, then deals the concatenation of all
/// classes round-robin over folds. Per-class counts per fold then differ by at
/// most one, and overall fold sizes do too.
inline FoldPlan stratified_kfold(const Labels& labels, int k,
                                 std::uint64_t seed) {
  const int n = static_cast<int>(labels.size());
  require(k >= 2, "stratified_kfold: fold count must be at least 2");
  require(k <= n, "stratified_kfold: more folds than samples");

  std::map<int, IndexList> by_class;
  for (int i = 0; i < n; ++i) by_class[labels[i]].push_back(i);

  std::mt19937_64 rng(seed);
  FoldPlan plan;
  plan.k = k;
  plan.fold_of.assign(static_cast<std::size_t>(n), -1);
  int position = 0;
  for (auto& [cls, members] : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    for (int idx : members) plan.fold_of[idx] = position++ % k;
  }
  return plan;
}

/// Unstratified shuffled k-fold, used when folding over tasks.
inline FoldPlan kfold(int n, int k, std::uint64_t seed) {
  require(k >= 2, "kfold: fold count must be at least 2");
  require(k <= n, "kfold: more folds than items");
  IndexList order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  FoldPlan plan;
  plan.k = k;
  plan.fold_of.assign(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < n; ++i) plan.fold_of[order[i]] = i % k;
  return plan;
}

}  // namespace forest2mlp
