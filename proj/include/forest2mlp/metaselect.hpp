#pragma once

// Dataset metafeatures and a random-forest selector that predicts the best
// student configuration for an unseen task.

#include "forest2mlp/data.hpp"
#include "forest2mlp/forest.hpp"
#include "forest2mlp/portfolio.hpp"

#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <string_view>
#include <vector>

namespace forest2mlp {

inline constexpr int kMetaFeatureVersion = 1;

/// Descriptor order of the metafeature vector (version 1). Column statistics
/// use observed cells only; "column means/stds/skewness/kurtosis" are
/// summarized across columns by their mean, min, max and population std.
inline constexpr std::array<std::string_view, 32> kMetaFeatureNames = {
    "n_instances",              // n
    "n_features",               // d, after one-hot expansion
    "n_classes",                // C
    "log_n_instances",          // ln n
    "log_n_features",           // ln d
    "dimensionality",           // d / n
    "missing_cell_ratio",       // missing cells / (n d)
    "missing_row_ratio",        // rows with any missing / n
    "categorical_ratio",        // one-hot columns / d
    "class_entropy",            // -sum p log2 p
    "class_entropy_normalized", // entropy / log2 C
    "min_class_proportion",
    "max_class_proportion",
    "class_imbalance_ratio",    // max proportion / min proportion
    "col_mean_mean", "col_mean_min", "col_mean_max", "col_mean_std",
    "col_std_mean", "col_std_min", "col_std_max", "col_std_std",
    "col_skew_mean", "col_skew_min", "col_skew_max", "col_skew_std",
    "col_kurt_mean", "col_kurt_min", "col_kurt_max", "col_kurt_std",
    "pca_top_third_variance",   // variance share of the top ceil(d/3) standardized PCs
    "pca_95_fraction",          // PCs needed for 95% variance / d
};

inline constexpr int kMetaFeatureCount = static_cast<int>(kMetaFeatureNames.size());

using MetaFeatures = Vector;

struct ColumnMoments {
  double mean = 0.0;
  double std = 0.0;       // population
  double skewness = 0.0;  // m3 / m2^1.5
  double kurtosis = 0.0;  // m4 / m2^2 - 3
};

/// Moments over the non-NaN cells of `col`; undefined statistics are 0.
inline ColumnMoments column_moments(const Eigen::Ref<const Vector>& col) {
  ColumnMoments m;
  double sum = 0.0;
  int count = 0;
  for (Eigen::Index i = 0; i < col.size(); ++i)
    if (!std::isnan(col[i])) sum += col[i], ++count;
  if (count == 0) return m;
  m.mean = sum / count;
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (Eigen::Index i = 0; i < col.size(); ++i) {
    if (std::isnan(col[i])) continue;
    const double dev = col[i] - m.mean;
    m2 += dev * dev;
    m3 += dev * dev * dev;
    m4 += dev * dev * dev * dev;
  }
  m2 /= count, m3 /= count, m4 /= count;
  m.std = std::sqrt(m2);
  // Relative threshold so a constant column shifted far from 0 still reads as constant.
  if (m2 > 1e-24 * std::max(1.0, m.mean * m.mean)) {
    m.skewness = m3 / std::pow(m2, 1.5);
    m.kurtosis = m4 / (m2 * m2) - 3.0;
  }
  return m;
}

namespace detail {

inline std::array<double, 4> summarize(const std::vector<double>& v) {
  if (v.empty()) return {0, 0, 0, 0};
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return {mean, *std::min_element(v.begin(), v.end()),
          *std::max_element(v.begin(), v.end()), std::sqrt(var / n)};
}

}  // namespace detail

inline MetaFeatures extract_metafeatures(const Dataset& ds) {
  const Eigen::Index n = ds.rows(), d = ds.cols();
  const double nn = static_cast<double>(n), dd = static_cast<double>(d);
  MetaFeatures f = MetaFeatures::Zero(kMetaFeatureCount);
  int i = 0;
  f[i++] = nn;
  f[i++] = dd;
  f[i++] = ds.class_count;
  f[i++] = std::log(nn);
  f[i++] = std::log(dd);
  f[i++] = dd / nn;

  const Eigen::Index missing = ds.missing_mask.count();
  f[i++] = static_cast<double>(missing) / (nn * dd);
  f[i++] = static_cast<double>(ds.missing_mask.rowwise().any().count()) / nn;
  f[i++] = std::count(ds.feature_kinds.begin(), ds.feature_kinds.end(),
                      FeatureKind::categorical) / dd;

  std::vector<double> counts(static_cast<std::size_t>(ds.class_count), 0.0);
  for (int y : ds.labels) counts[y] += 1.0;
  double entropy = 0.0, pmin = 1.0, pmax = 0.0;
  for (double c : counts) {
    const double p = c / nn;
    if (p > 0) entropy -= p * std::log2(p);
    pmin = std::min(pmin, p);
    pmax = std::max(pmax, p);
  }
  f[i++] = entropy;
  f[i++] = entropy / std::log2(static_cast<double>(ds.class_count));
  f[i++] = pmin;
  f[i++] = pmax;
  f[i++] = pmin > 0 ? pmax / pmin : nn;

  std::vector<double> means, stds, skews, kurts;
  for (Eigen::Index j = 0; j < d; ++j) {
    const ColumnMoments m = column_moments(ds.features.col(j));
    means.push_back(m.mean);
    stds.push_back(m.std);
    skews.push_back(m.skewness);
    kurts.push_back(m.kurtosis);
  }
  for (const auto* v : {&means, &stds, &skews, &kurts})
    for (double s : detail::summarize(*v)) f[i++] = s;

  double top_third = 0.0, pc95 = 1.0;
  if (n >= 2) {
    const Matrix imputed = MeanImputer::fit(ds.features).apply(ds.features);
    const Vector ev = fit_pca(Standardizer::fit(imputed).apply(imputed)).explained_variance;
    const double total = ev.sum();
    if (total > 0) {
      const auto top = static_cast<Eigen::Index>(std::ceil(dd / 3.0));
      top_third = ev.head(top).sum() / total;
      double acc = 0.0;
      for (Eigen::Index c = 0; c < ev.size(); ++c) {
        acc += ev[c];
        if (acc >= 0.95 * total) {
          pc95 = static_cast<double>(c + 1) / dd;
          break;
        }
      }
    }
  }
  f[i++] = top_third;
  f[i++] = pc95;

  for (Eigen::Index k = 0; k < f.size(); ++k)
    if (!std::isfinite(f[k])) f[k] = 0.0;
  return f;
}

// ---------------------------------------------------------------------------
// Selector

/// Forest over config ids. A training fold whose tasks all share one target
/// yields a constant selector.
struct SelectorModel {
  std::vector<int> vocabulary;  // class index -> config id
  std::optional<Forest> forest;

  int predict(const Eigen::Ref<const RowVector>& metafeatures) const {
    if (!forest) return vocabulary.front();
    const Matrix row = metafeatures;
    return vocabulary[argmax_rows(predict_proba(*forest, row)).front()];
  }
};

/// Best config id within `candidates` for each task; ties go to the lower id.
inline std::vector<int> best_config_per_task(const PerformanceMatrix& pm,
                                             std::vector<int> candidates) {
  require(!candidates.empty(), "candidate set is empty");
  std::sort(candidates.begin(), candidates.end());
  std::vector<int> out;
  for (int t = 0; t < pm.task_count(); ++t) {
    int best = candidates.front();
    for (int id : candidates)
      if (pm.values(t, pm.column_of(id)) > pm.values(t, pm.column_of(best))) best = id;
    out.push_back(best);
  }
  return out;
}

inline SelectorModel fit_selector(const Matrix& metafeatures, const std::vector<int>& targets,
                                  ForestParams params) {
  require(metafeatures.rows() == static_cast<Eigen::Index>(targets.size()) && !targets.empty(),
          "fit_selector: metafeature/target count mismatch");
  SelectorModel model;
  model.vocabulary = targets;
  std::sort(model.vocabulary.begin(), model.vocabulary.end());
  model.vocabulary.erase(std::unique(model.vocabulary.begin(), model.vocabulary.end()),
                         model.vocabulary.end());
  if (model.vocabulary.size() == 1) return model;
  Labels y;
  for (int t : targets)
    y.push_back(static_cast<int>(
        std::lower_bound(model.vocabulary.begin(), model.vocabulary.end(), t) -
        model.vocabulary.begin()));
  model.forest = fit_forest(metafeatures, y, params,
                            static_cast<int>(model.vocabulary.size()));
  return model;
}

struct SelectorCrossValidation {
  std::vector<SelectorModel> fold_models;
  FoldPlan folds;
  std::vector<int> targets;           // per task: best candidate
  std::vector<int> predictions;       // per task: held-out selector choice
  std::vector<int> baseline;          // per task: training-fold majority target
  double selection_accuracy = 0.0;    // predictions == targets
  double baseline_accuracy = 0.0;
};

/// Cross-validates the selector over tasks. Row t of `metafeatures` describes
/// task t of `pm`. Each task is predicted only by the model of the fold that
/// holds it out.
inline SelectorCrossValidation train_selector(const Matrix& metafeatures,
                                              const PerformanceMatrix& pm,
                                              const std::vector<int>& candidates,
                                              int k, std::uint64_t seed,
                                              ForestParams params = {}) {
  const int tasks = pm.task_count();
  require(metafeatures.rows() == tasks, "train_selector: one metafeature row per task");
  require(!candidates.empty(), "train_selector: empty candidate set");
  require(tasks >= 2 * k, "train_selector: " + std::to_string(tasks) +
                              " tasks are too few for " + std::to_string(k) +
                              " folds (need at least 2 per fold)");
  SelectorCrossValidation cv;
  cv.folds = kfold(tasks, k, seed);
  cv.targets = best_config_per_task(pm, candidates);
  cv.predictions.assign(static_cast<std::size_t>(tasks), -1);
  cv.baseline.assign(static_cast<std::size_t>(tasks), -1);

  for (int f = 0; f < k; ++f) {
    const IndexList train = cv.folds.train_indices(f);
    const IndexList test = cv.folds.test_indices(f);
    std::vector<int> train_targets;
    for (int t : train) train_targets.push_back(cv.targets[t]);
    params.seed = mix_seed(seed, static_cast<std::uint64_t>(f));
    cv.fold_models.push_back(
        fit_selector(select_rows(metafeatures, train), train_targets, params));

    std::map<int, int> freq;
    for (int t : train_targets) ++freq[t];
    int majority = freq.begin()->first;
    for (auto [id, count] : freq)
      if (count > freq[majority]) majority = id;

    for (int t : test) {
      cv.predictions[t] = cv.fold_models.back().predict(metafeatures.row(t));
      cv.baseline[t] = majority;
    }
  }
  int hits = 0, base_hits = 0;
  for (int t = 0; t < tasks; ++t) {
    hits += cv.predictions[t] == cv.targets[t];
    base_hits += cv.baseline[t] == cv.targets[t];
  }
  cv.selection_accuracy = static_cast<double>(hits) / tasks;
  cv.baseline_accuracy = static_cast<double>(base_hits) / tasks;
  return cv;
}

/// Mean over tasks of the accuracy of the config chosen for each task.
inline double evaluate_selector(const std::vector<int>& chosen, const PerformanceMatrix& pm) {
  require(static_cast<int>(chosen.size()) == pm.task_count(),
          "evaluate_selector: need one choice per task");
  double total = 0.0;
  for (int t = 0; t < pm.task_count(); ++t) {
    require(chosen[t] >= 0, "evaluate_selector: task " + pm.task_names[t] +
                                " has no held-out prediction");
    total += pm.values(t, pm.column_of(chosen[t]));
  }
  return total / pm.task_count();
}

}  // namespace forest2mlp
