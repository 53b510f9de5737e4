#pragma once

// Teacher-to-student transfer under k-fold cross-validation.
//
// For every fold the teacher pipeline (mean imputation, PCA, random forest) is
// fit on the training split, the forest's posteriors on those rows form the
// transfer set, and every student configuration is trained on it. Teacher and
// students are then scored against ground truth on the held-out split.

#include "forest2mlp/augment.hpp"
#include "forest2mlp/data.hpp"
#include "forest2mlp/forest.hpp"
#include "forest2mlp/mlp.hpp"

#include <algorithm>
#include <chrono>
#include <functional>
#include <mutex>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace forest2mlp {

// ---------------------------------------------------------------------------
// Student grid

inline constexpr int kGridSize = static_cast<int>(
    kLayerChoices.size() * kNodeChoices.size() * kBottleneckChoices.size() *
    kActivationChoices.size() * kLearningRateChoices.size());

/// Full Cartesian product, ordered with layers outermost, then nodes,
/// bottleneck ratio, activation, and learning rate innermost. A config's
/// position in this list is its id.
inline std::vector<StudentConfig> enumerate_grid() {
  std::vector<StudentConfig> grid;
  grid.reserve(kGridSize);
  for (int layers : kLayerChoices)
    for (int nodes : kNodeChoices)
      for (double ratio : kBottleneckChoices)
        for (Activation act : kActivationChoices)
          for (double lr : kLearningRateChoices)
            grid.push_back({layers, nodes, ratio, act, lr});
  return grid;
}

inline int config_id(const StudentConfig& cfg) {
  auto index_of = [](const auto& options, auto v) {
    auto it = std::find(options.begin(), options.end(), v);
    require(it != options.end(), "student config outside the grid domain");
    return static_cast<int>(it - options.begin());
  };
  int id = index_of(kLayerChoices, cfg.layers);
  id = id * int(kNodeChoices.size()) + index_of(kNodeChoices, cfg.nodes_per_layer);
  id = id * int(kBottleneckChoices.size()) + index_of(kBottleneckChoices, cfg.bottleneck_ratio);
  id = id * int(kActivationChoices.size()) + index_of(kActivationChoices, cfg.activation);
  id = id * int(kLearningRateChoices.size()) + index_of(kLearningRateChoices, cfg.init_learning_rate);
  return id;
}

inline StudentConfig config_from_id(int id) {
  require(id >= 0 && id < kGridSize, "config id out of range: " + std::to_string(id));
  static const std::vector<StudentConfig> grid = enumerate_grid();
  return grid[static_cast<std::size_t>(id)];
}

/// Parses either a numeric id or the to_string() form, e.g. "L2-N400-B1-relu-lr0.01".
inline StudentConfig parse_config(const std::string& text) {
  double numeric;
  if (parse_double(text, numeric)) return config_from_id(static_cast<int>(numeric));
  for (const StudentConfig& cfg : enumerate_grid())
    if (to_string(cfg) == text) return cfg;
  throw Error("unknown student config '" + text + "'");
}

// ---------------------------------------------------------------------------
// Soft labels

struct SoftLabelSet {
  Matrix posteriors;
  std::string source;
};

inline SoftLabelSet generate_soft_labels(const Forest& teacher, const Matrix& x,
                                         std::string source = "forest") {
  return SoftLabelSet{predict_proba(teacher, x), std::move(source)};
}

// ---------------------------------------------------------------------------
// Per-fold pipeline

struct DistillSettings {
  ForestParams teacher;  // seed is overridden per fold
  TrainOptions student;  // seed is overridden per fold
  int pca_components = 0;  // 0: keep all
  AugmentSettings augment;
  int workers = 1;
};

/// Seed streams derived from (task seed, fold).
struct FoldSeeds {
  std::uint64_t teacher, student, augment;
};

inline FoldSeeds fold_seeds(std::uint64_t task_seed, int fold) {
  const auto f = static_cast<std::uint64_t>(fold);
  return {mix_seed(task_seed, 4 * f), mix_seed(task_seed, 4 * f + 1),
          mix_seed(task_seed, 4 * f + 2)};
}

inline std::uint64_t task_seed(std::uint64_t experiment_seed, const std::string& task) {
  return mix_seed(experiment_seed, hash_name(task));
}

inline std::uint64_t fold_plan_seed(std::uint64_t task_seed_) {
  return mix_seed(task_seed_, 0xf01dULL);
}

/// Everything a fold learns from its training split.
struct FoldModels {
  MeanImputer imputer;
  PcaModel pca;
  Forest teacher;
  Standardizer student_scaler;
  Matrix transfer_inputs;  // teacher space, base rows first
  SoftLabelSet transfer_labels;

  Matrix teacher_space(const Matrix& raw) const {
    return transform_pca(pca, imputer.apply(raw));
  }
};

/// Expects an un-augmented transfer set. Replaces it with the base rows plus round(multiplier * n)
/// rows sampled from a density fit in teacher space, all teacher-labelled.
inline void augment_transfer_set(FoldModels& fm, const AugmentSettings& augment,
                                 std::uint64_t seed) {
  const Matrix base = fm.transfer_inputs;
  const DensityModel density = fit_density(base, augment, seed);
  const int m = static_cast<int>(
      std::lround(augment.multiplier * static_cast<double>(base.rows())));
  AugmentedSet aug = augment_training_set(fm.teacher, base, density, m, mix_seed(seed, 1));
  fm.transfer_inputs = std::move(aug.inputs);
  fm.transfer_labels = SoftLabelSet{std::move(aug.soft_labels), "forest+augment"};
}

/// Fits the preprocessing and the teacher on `train_rows` only, then builds
/// the transfer set (optionally augmented). Labels of held-out rows are never
/// read.
inline FoldModels fit_fold(const Dataset& ds, const IndexList& train_rows,
                           const DistillSettings& settings, const FoldSeeds& seeds) {
  FoldModels fm;
  const Matrix raw = select_rows(ds.features, train_rows);
  const Labels y = select(ds.labels, train_rows);
  fm.imputer = MeanImputer::fit(raw);
  const Matrix imputed = fm.imputer.apply(raw);
  fm.pca = fit_pca(imputed, std::min<Eigen::Index>(settings.pca_components,
                                                   imputed.cols()));
  const Matrix z = transform_pca(fm.pca, imputed);

  ForestParams tp = settings.teacher;
  tp.seed = seeds.teacher;
  fm.teacher = fit_forest(z, y, tp, ds.class_count);

  fm.transfer_inputs = z;
  fm.transfer_labels = generate_soft_labels(fm.teacher, z);
  if (settings.augment.sampler != SamplerKind::none)
    augment_transfer_set(fm, settings.augment, seeds.augment);
  fm.student_scaler = Standardizer::fit(z);
  return fm;
}

struct StudentOutcome {
  double accuracy = 0.0;
  bool diverged = false;
  double wall_time = 0.0;
};

/// Trains one student on the fold's transfer set and scores it on `test_x`
/// (raw features) against `test_y`. Divergence scores 0.
inline StudentOutcome evaluate_student(const FoldModels& fm, const StudentConfig& cfg,
                                       const TrainOptions& base_opts,
                                       std::uint64_t student_seed,
                                       const Matrix& test_x, const Labels& test_y,
                                       Mlp* trained = nullptr) {
  const auto start = std::chrono::steady_clock::now();
  StudentOutcome out;
  TrainOptions opts = base_opts;
  opts.seed = student_seed;
  try {
    Mlp net = train_student(fm.student_scaler.apply(fm.transfer_inputs),
                            fm.transfer_labels.posteriors, cfg, opts);
    const Labels pred =
        predict(net, fm.student_scaler.apply(fm.teacher_space(test_x)));
    out.accuracy = accuracy(pred, test_y);
    if (trained) *trained = std::move(net);
  } catch (const DivergenceError& e) {
    out.diverged = true;
    out.accuracy = 0.0;
    warn(std::string(e.what()) + " (" + to_string(cfg) + ")");
  }
  out.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

// ---------------------------------------------------------------------------
// Task-level results

struct TaskResult {
  std::string task;
  std::vector<int> config_ids;
  std::vector<double> teacher_fold_accuracy;               // [fold]
  std::vector<std::vector<double>> student_fold_accuracy;  // [config][fold]
  std::vector<std::vector<bool>> student_diverged;         // [config][fold]

  int fold_count() const { return static_cast<int>(teacher_fold_accuracy.size()); }

  double teacher_mean() const {
    return std::accumulate(teacher_fold_accuracy.begin(), teacher_fold_accuracy.end(), 0.0) /
           static_cast<double>(teacher_fold_accuracy.size());
  }

  double student_mean(std::size_t config_index) const {
    const auto& v = student_fold_accuracy.at(config_index);
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  }

  /// Index (into config_ids) of the config with the highest mean accuracy;
  /// ties go to the earlier entry.
  std::size_t best_student_index() const {
    require(!config_ids.empty(), "task result has no students");
    std::size_t best = 0;
    for (std::size_t i = 1; i < config_ids.size(); ++i)
      if (student_mean(i) > student_mean(best)) best = i;
    return best;
  }

  double best_student_mean() const { return student_mean(best_student_index()); }
};

/// One scored model: the fold teacher (config_index == -1) or a student.
struct UnitRecord {
  int fold = 0;
  int config_index = -1;  // index into the config list; -1 for the teacher
  double accuracy = 0.0;
  bool diverged = false;
  double wall_time = 0.0;
};

struct TaskHooks {
  /// Returns true when the unit already has a stored result.
  std::function<bool(int fold, int config_index)> done;
  /// Receives every finished unit; may be called from worker threads.
  std::function<void(const UnitRecord&)> record;
  /// Optional; receives trained models (student is null for the teacher unit).
  std::function<void(int fold, int config_index, const FoldModels&, const Mlp*)> model;
};

/// Executes the (fold, config) work units of one task. A fold's teacher is
/// refit whenever any of its units is still pending.
inline void run_task_units(const Dataset& ds, const DistillSettings& settings,
                           const std::vector<StudentConfig>& configs,
                           const FoldPlan& folds, std::uint64_t seed,
                           const TaskHooks& hooks) {
  require(!configs.empty(), "run_task: no student configs");
  require(static_cast<Eigen::Index>(folds.fold_of.size()) == ds.rows(),
          "run_task: fold plan does not cover the dataset");
  const int k = folds.k;
  const int s = static_cast<int>(configs.size());
  auto done = [&](int f, int c) { return hooks.done && hooks.done(f, c); };

  std::vector<int> pending_folds;
  for (int f = 0; f < k; ++f) {
    bool pending = !done(f, -1);
    for (int c = 0; c < s && !pending; ++c) pending = !done(f, c);
    if (pending) pending_folds.push_back(f);
  }

  std::vector<FoldModels> models(static_cast<std::size_t>(k));
  parallel_for(static_cast<int>(pending_folds.size()), settings.workers, [&](int i) {
    const int f = pending_folds[i];
    const auto start = std::chrono::steady_clock::now();
    models[f] = fit_fold(ds, folds.train_indices(f), settings, fold_seeds(seed, f));
    const IndexList test = folds.test_indices(f);
    UnitRecord rec;
    rec.fold = f;
    rec.accuracy = accuracy(
        predict(models[f].teacher, models[f].teacher_space(select_rows(ds.features, test))),
        select(ds.labels, test));
    rec.wall_time =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (hooks.model) hooks.model(f, -1, models[f], nullptr);
    if (!done(f, -1) && hooks.record) hooks.record(rec);
  });

  std::vector<std::pair<int, int>> units;
  for (int f : pending_folds)
    for (int c = 0; c < s; ++c)
      if (!done(f, c)) units.emplace_back(f, c);

  parallel_for(static_cast<int>(units.size()), settings.workers, [&](int u) {
    const auto [f, c] = units[u];
    const IndexList test = folds.test_indices(f);
    Mlp net;
    const StudentOutcome out = evaluate_student(
        models[f], configs[c], settings.student, fold_seeds(seed, f).student,
        select_rows(ds.features, test), select(ds.labels, test),
        hooks.model ? &net : nullptr);
    if (hooks.model && !out.diverged) hooks.model(f, c, models[f], &net);
    if (hooks.record) hooks.record({f, c, out.accuracy, out.diverged, out.wall_time});
  });
}

/// Runs the full protocol for one dataset. `seed` is the task seed.
inline TaskResult run_task(const Dataset& ds, const DistillSettings& settings,
                           const std::vector<StudentConfig>& configs,
                           const FoldPlan& folds, std::uint64_t seed) {
  const int k = folds.k;
  const int s = static_cast<int>(configs.size());
  TaskResult result;
  result.task = ds.name;
  for (const auto& c : configs) result.config_ids.push_back(config_id(c));
  result.teacher_fold_accuracy.assign(k, 0.0);
  result.student_fold_accuracy.assign(s, std::vector<double>(k, 0.0));
  result.student_diverged.assign(s, std::vector<bool>(k, false));

  std::mutex mu;
  TaskHooks hooks;
  hooks.record = [&](const UnitRecord& r) {
    std::lock_guard lock(mu);
    if (r.config_index < 0) {
      result.teacher_fold_accuracy[r.fold] = r.accuracy;
    } else {
      result.student_fold_accuracy[r.config_index][r.fold] = r.accuracy;
      result.student_diverged[r.config_index][r.fold] = r.diverged;
    }
  };
  run_task_units(ds, settings, configs, folds, seed, hooks);
  return result;
}

// ---------------------------------------------------------------------------
// Teacher/student accuracy-difference histogram

struct HistogramBin {
  double lower = 0.0;
  double upper = 0.0;
  int count = 0;
};

struct AccuracyHistogram {
  std::vector<std::string> tasks;
  std::vector<double> differences;  // best student mean - teacher mean
  std::vector<HistogramBin> bins;
  double mean = 0.0;
  double median = 0.0;
  double fraction_not_worse = 0.0;  // share of tasks with difference >= 0
};

inline double median_of(std::vector<double> v) {
  require(!v.empty(), "median of empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Equal-width bins spanning [min, max] of the differences; a single bin when
/// every difference is equal. The last bin is closed on the right.
inline AccuracyHistogram accuracy_histogram(const std::vector<TaskResult>& results,
                                            int bins) {
  require(!results.empty(), "accuracy_histogram: no task results");
  require(bins >= 1, "accuracy_histogram: need at least one bin");
  AccuracyHistogram h;
  for (const TaskResult& r : results) {
    require(!r.config_ids.empty() && r.fold_count() > 0,
            "accuracy_histogram: empty task result '" + r.task + "'");
    h.tasks.push_back(r.task);
    h.differences.push_back(r.best_student_mean() - r.teacher_mean());
  }
  const double n = static_cast<double>(h.differences.size());
  h.mean = std::accumulate(h.differences.begin(), h.differences.end(), 0.0) / n;
  h.median = median_of(h.differences);
  h.fraction_not_worse =
      std::count_if(h.differences.begin(), h.differences.end(),
                    [](double d) { return d >= -1e-12; }) / n;

  const auto [lo_it, hi_it] = std::minmax_element(h.differences.begin(), h.differences.end());
  const double lo = *lo_it, hi = *hi_it;
  if (hi - lo <= 1e-12) {
    h.bins.push_back({lo, hi, static_cast<int>(h.differences.size())});
    return h;
  }
  const double width = (hi - lo) / bins;
  for (int b = 0; b < bins; ++b)
    h.bins.push_back({lo + b * width, b + 1 == bins ? hi : lo + (b + 1) * width, 0});
  for (double d : h.differences) {
    int b = static_cast<int>((d - lo) / width);
    ++h.bins[std::clamp(b, 0, bins - 1)].count;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Paired augmented-vs-base comparison

struct AugmentFoldComparison {
  double base_accuracy = 0.0;
  double augmented_accuracy = 0.0;
  double base_agreement = 0.0;  // student vs teacher argmax on the test split
  double augmented_agreement = 0.0;
  int augmented_rows = 0;
};

struct AugmentComparison {
  std::string task;
  std::vector<AugmentFoldComparison> folds;

  template <typename Field>
  double mean(Field field) const {
    double total = 0.0;
    for (const auto& f : folds) total += f.*field;
    return total / static_cast<double>(folds.size());
  }
};

/// Per fold, trains the same student config (same seed) on the plain and the
/// augmented transfer set of one shared teacher.
inline AugmentComparison compare_augmentation(const Dataset& ds,
                                              const DistillSettings& settings,
                                              const StudentConfig& cfg,
                                              const FoldPlan& folds, std::uint64_t seed) {
  require(settings.augment.sampler != SamplerKind::none,
          "compare_augmentation: no sampler configured");
  DistillSettings plain = settings;
  plain.augment.sampler = SamplerKind::none;

  AugmentComparison out;
  out.task = ds.name;
  out.folds.resize(static_cast<std::size_t>(folds.k));
  parallel_for(folds.k, settings.workers, [&](int f) {
    const FoldSeeds seeds = fold_seeds(seed, f);
    FoldModels base = fit_fold(ds, folds.train_indices(f), plain, seeds);
    FoldModels augmented = base;
    augment_transfer_set(augmented, settings.augment, seeds.augment);

    const IndexList test = folds.test_indices(f);
    const Matrix test_x = select_rows(ds.features, test);
    const Labels test_y = select(ds.labels, test);
    const Labels teacher_pred = predict(base.teacher, base.teacher_space(test_x));

    auto score = [&](const FoldModels& fm, double& acc, double& agree) {
      Mlp net;
      const StudentOutcome o =
          evaluate_student(fm, cfg, settings.student, seeds.student, test_x, test_y, &net);
      acc = o.accuracy;
      agree = o.diverged
                  ? 0.0
                  : forest2mlp::accuracy(
                        predict(net, fm.student_scaler.apply(fm.teacher_space(test_x))),
                        teacher_pred);
    };
    AugmentFoldComparison& c = out.folds[f];
    score(base, c.base_accuracy, c.base_agreement);
    score(augmented, c.augmented_accuracy, c.augmented_agreement);
    c.augmented_rows = static_cast<int>(augmented.transfer_inputs.rows());
  });
  return out;
}

}  // namespace forest2mlp
