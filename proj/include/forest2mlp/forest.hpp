#pragma once

// Random-forest teacher: CART trees grown with Gini impurity on bootstrap
// samples, with a fresh feature subset drawn at every node. Posteriors are the
// average of the leaf class distributions reached in each tree.

#include "forest2mlp/common.hpp"
#include "forest2mlp/container.hpp"

#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <utility>
#include <vector>

namespace forest2mlp {

/// 1 - sum_i (c_i / N)^2.
inline double gini(std::span<const int> counts) {
  long long total = 0;
  for (int c : counts) {
    require(c >= 0, "gini: negative count");
    total += c;
  }
  require(total > 0, "gini: all counts are zero");
  const double n = static_cast<double>(total);
  double sum_sq = 0.0;
  for (int c : counts) sum_sq += (c / n) * (c / n);
  return 1.0 - sum_sq;
}

inline double gini(std::initializer_list<int> counts) {
  return gini(std::span<const int>(counts.begin(), counts.size()));
}

struct Split {
  int feature = -1;
  double threshold = 0.0;
  double gain = 0.0;
};

namespace detail {

// Gains at or below this are treated as "no improvement".
inline constexpr double kMinGain = 1e-12;

inline int class_count_of(const Labels& y) {
  int c = 0;
  for (int v : y) {
    require(v >= 0, "negative class label");
    c = std::max(c, v + 1);
  }
  return c;
}

// Sweeps each feature in `features` order over the given rows. Samples with
// x <= threshold go left. Candidate thresholds are midpoints between
// consecutive distinct values; a strictly larger gain replaces the incumbent.
inline std::optional<Split> best_split_rows(const Matrix& x, const Labels& y,
                                            int class_count,
                                            std::span<const int> rows,
                                            std::span<const int> features,
                                            int min_samples_leaf) {
  const int n = static_cast<int>(rows.size());
  if (n < 2 || n < 2 * min_samples_leaf) return std::nullopt;

  std::vector<int> parent(static_cast<std::size_t>(class_count), 0);
  for (int r : rows) ++parent[y[r]];
  const double parent_gini = gini(parent);
  if (parent_gini <= 0.0) return std::nullopt;

  std::optional<Split> best;
  double best_gain = kMinGain;
  std::vector<std::pair<double, int>> sorted(static_cast<std::size_t>(n));
  std::vector<int> left(static_cast<std::size_t>(class_count));
  std::vector<int> right(static_cast<std::size_t>(class_count));

  for (int f : features) {
    for (int i = 0; i < n; ++i) sorted[i] = {x(rows[i], f), y[rows[i]]};
    std::sort(sorted.begin(), sorted.end());
    std::fill(left.begin(), left.end(), 0);
    right = parent;
    for (int i = 0; i + 1 < n; ++i) {
      ++left[sorted[i].second];
      --right[sorted[i].second];
      const double lo = sorted[i].first, hi = sorted[i + 1].first;
      if (!(lo < hi)) continue;
      const int n_left = i + 1, n_right = n - n_left;
      if (n_left < min_samples_leaf || n_right < min_samples_leaf) continue;
      const double gain =
          parent_gini - (n_left * gini(left) + n_right * gini(right)) / n;
      if (gain > best_gain) {
        double threshold = lo + (hi - lo) / 2.0;
        if (!(threshold < hi)) threshold = lo;
        best_gain = gain;
        best = Split{f, threshold, gain};
      }
    }
  }
  return best;
}

}  // namespace detail

/// Best Gini split over `feature_subset`, or nullopt when no candidate
/// threshold yields a positive impurity decrease.
inline std::optional<Split> best_split(const Matrix& x, const Labels& y,
                                       std::span<const int> feature_subset,
                                       int min_samples_leaf = 1) {
  require(static_cast<Eigen::Index>(y.size()) == x.rows(),
          "best_split: label count mismatch");
  for (int f : feature_subset)
    require(f >= 0 && f < x.cols(), "best_split: feature index out of range");
  std::vector<int> rows(y.size());
  std::iota(rows.begin(), rows.end(), 0);
  return detail::best_split_rows(x, y, detail::class_count_of(y), rows,
                                 feature_subset, min_samples_leaf);
}

// ---------------------------------------------------------------------------

struct ForestParams {
  int n_trees = 100;
  int max_depth = -1;  // -1: unlimited
  int min_samples_leaf = 1;
  int features_per_split = 0;  // 0: ceil(sqrt(d))
  bool bootstrap = true;
  std::uint64_t seed = 0;

  bool operator==(const ForestParams&) const = default;
};

/// One CART tree stored as parallel node arrays. Node 0 is the root; leaves
/// have feature == -1 and children == -1. Every node keeps the class
/// distribution of the training samples that reached it.
struct Tree {
  std::vector<int> feature;
  std::vector<double> threshold;
  std::vector<int> left;
  std::vector<int> right;
  std::vector<double> distribution;  // node_count x class_count, row-major

  int node_count() const { return static_cast<int>(feature.size()); }
  bool is_leaf(int node) const { return feature[node] < 0; }

  int depth(int node = 0) const {
    if (is_leaf(node)) return 0;
    return 1 + std::max(depth(left[node]), depth(right[node]));
  }

  bool operator==(const Tree&) const = default;
};

struct Forest {
  std::vector<Tree> trees;
  ForestParams params;
  int class_count = 0;
  int feature_count = 0;

  bool operator==(const Forest&) const = default;
};

namespace detail {

class TreeBuilder {
 public:
  TreeBuilder(const Matrix& x, const Labels& y, int class_count,
              const ForestParams& params, int features_per_split,
              std::mt19937_64& rng)
      : x_(x), y_(y), classes_(class_count), params_(params),
        mtry_(features_per_split), rng_(rng),
        all_features_(static_cast<std::size_t>(x.cols())) {
    std::iota(all_features_.begin(), all_features_.end(), 0);
  }

  Tree build(std::vector<int> rows) {
    grow(rows, 0);
    return std::move(tree_);
  }

 private:
  int add_node(std::span<const int> rows) {
    const int id = tree_.node_count();
    tree_.feature.push_back(-1);
    tree_.threshold.push_back(0.0);
    tree_.left.push_back(-1);
    tree_.right.push_back(-1);
    std::vector<double> dist(static_cast<std::size_t>(classes_), 0.0);
    for (int r : rows) dist[y_[r]] += 1.0;
    for (double& v : dist) v /= static_cast<double>(rows.size());
    tree_.distribution.insert(tree_.distribution.end(), dist.begin(), dist.end());
    return id;
  }

  // Partial Fisher-Yates: the first mtry_ entries become the subset.
  std::span<const int> draw_features() {
    const int d = static_cast<int>(all_features_.size());
    for (int i = 0; i < mtry_; ++i) {
      std::uniform_int_distribution<int> pick(i, d - 1);
      std::swap(all_features_[i], all_features_[pick(rng_)]);
    }
    return std::span<const int>(all_features_.data(),
                                static_cast<std::size_t>(mtry_));
  }

  int grow(std::vector<int>& rows, int depth) {
    const int id = add_node(rows);
    if (params_.max_depth >= 0 && depth >= params_.max_depth) return id;
    auto subset = draw_features();
    std::vector<int> features(subset.begin(), subset.end());
    auto split = best_split_rows(x_, y_, classes_, rows, features,
                                 params_.min_samples_leaf);
    if (!split) return id;

    std::vector<int> lrows, rrows;
    for (int r : rows)
      (x_(r, split->feature) <= split->threshold ? lrows : rrows).push_back(r);
    rows.clear();
    rows.shrink_to_fit();

    tree_.feature[id] = split->feature;
    tree_.threshold[id] = split->threshold;
    const int l = grow(lrows, depth + 1);
    tree_.left[id] = l;
    const int r = grow(rrows, depth + 1);
    tree_.right[id] = r;
    return id;
  }

  const Matrix& x_;
  const Labels& y_;
  int classes_;
  const ForestParams& params_;
  int mtry_;
  std::mt19937_64& rng_;
  std::vector<int> all_features_;
  Tree tree_;
};

}  // namespace detail

inline int resolve_features_per_split(const ForestParams& params, int d) {
  int m = params.features_per_split > 0
              ? params.features_per_split
              : static_cast<int>(std::ceil(std::sqrt(static_cast<double>(d))));
  return std::clamp(m, 1, d);
}

/// Trains the forest. Tree t draws from its own stream seeded by
/// mix_seed(seed, t), so results do not depend on `workers`.
/// `class_count` defaults to max(y) + 1.
inline Forest fit_forest(const Matrix& x, const Labels& y,
                         const ForestParams& params, int class_count = 0,
                         int workers = 1) {
  const int n = static_cast<int>(x.rows());
  require(static_cast<int>(y.size()) == n, "fit_forest: label count mismatch");
  require(n >= 2, "fit_forest: need at least 2 samples");
  require(params.n_trees >= 1, "fit_forest: n_trees must be >= 1");
  require(params.min_samples_leaf >= 1, "fit_forest: min_samples_leaf must be >= 1");
  require(!x.hasNaN(), "fit_forest: input has missing values");
  if (class_count == 0) class_count = detail::class_count_of(y);
  require(detail::class_count_of(y) <= class_count,
          "fit_forest: label exceeds class_count");
  {
    std::vector<bool> seen(static_cast<std::size_t>(class_count), false);
    int distinct = 0;
    for (int v : y)
      if (!seen[v]) seen[v] = true, ++distinct;
    require(distinct >= 2, "fit_forest: labels contain a single class");
  }

  Forest forest;
  forest.params = params;
  forest.class_count = class_count;
  forest.feature_count = static_cast<int>(x.cols());
  forest.trees.resize(static_cast<std::size_t>(params.n_trees));
  const int mtry = resolve_features_per_split(params, forest.feature_count);

  parallel_for(params.n_trees, workers, [&](int t) {
    std::mt19937_64 rng(mix_seed(params.seed, static_cast<std::uint64_t>(t)));
    std::vector<int> rows(static_cast<std::size_t>(n));
    if (params.bootstrap) {
      std::uniform_int_distribution<int> draw(0, n - 1);
      for (int& r : rows) r = draw(rng);
    } else {
      std::iota(rows.begin(), rows.end(), 0);
    }
    detail::TreeBuilder builder(x, y, class_count, params, mtry, rng);
    forest.trees[t] = builder.build(std::move(rows));
  });
  return forest;
}

inline Matrix predict_proba(const Forest& forest, const Matrix& x) {
  require(x.cols() == forest.feature_count,
          "predict_proba: expected " + std::to_string(forest.feature_count) +
              " columns, got " + std::to_string(x.cols()));
  const int c = forest.class_count;
  Matrix out = Matrix::Zero(x.rows(), c);
  for (const Tree& tree : forest.trees) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      int node = 0;
      while (!tree.is_leaf(node))
        node = x(i, tree.feature[node]) <= tree.threshold[node] ? tree.left[node]
                                                                : tree.right[node];
      const double* dist = tree.distribution.data() + std::size_t(node) * c;
      for (int k = 0; k < c; ++k) out(i, k) += dist[k];
    }
  }
  out /= static_cast<double>(forest.trees.size());
  return out;
}

inline Labels predict(const Forest& forest, const Matrix& x) {
  return argmax_rows(predict_proba(forest, x));
}

// ---------------------------------------------------------------------------
// Serialization. Forest payload:
//   u32 class_count, u32 feature_count,
//   u32 n_trees, i32 max_depth, u32 min_samples_leaf, u32 features_per_split,
//   u8 bootstrap, u64 seed,
//   per tree: u32 node_count, then per node
//     i32 feature, f64 threshold, i32 left, i32 right, f64[class_count] dist

inline std::vector<std::uint8_t> serialize(const Forest& forest) {
  ByteWriter w(PayloadKind::forest);
  w.u32(static_cast<std::uint32_t>(forest.class_count));
  w.u32(static_cast<std::uint32_t>(forest.feature_count));
  const ForestParams& p = forest.params;
  w.u32(static_cast<std::uint32_t>(forest.trees.size()));
  w.i32(p.max_depth);
  w.u32(static_cast<std::uint32_t>(p.min_samples_leaf));
  w.u32(static_cast<std::uint32_t>(p.features_per_split));
  w.u8(p.bootstrap ? 1 : 0);
  w.u64(p.seed);
  for (const Tree& t : forest.trees) {
    w.u32(static_cast<std::uint32_t>(t.node_count()));
    for (int i = 0; i < t.node_count(); ++i) {
      w.i32(t.feature[i]);
      w.f64(t.threshold[i]);
      w.i32(t.left[i]);
      w.i32(t.right[i]);
      for (int k = 0; k < forest.class_count; ++k)
        w.f64(t.distribution[std::size_t(i) * forest.class_count + k]);
    }
  }
  return w.bytes();
}

inline Forest deserialize_forest(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes, PayloadKind::forest);
  Forest f;
  f.class_count = static_cast<int>(r.u32());
  f.feature_count = static_cast<int>(r.u32());
  f.params.n_trees = static_cast<int>(r.u32());
  f.params.max_depth = r.i32();
  f.params.min_samples_leaf = static_cast<int>(r.u32());
  f.params.features_per_split = static_cast<int>(r.u32());
  f.params.bootstrap = r.u8() != 0;
  f.params.seed = r.u64();
  require(f.class_count >= 2 && f.params.n_trees >= 1, "corrupt forest header");
  f.trees.resize(static_cast<std::size_t>(f.params.n_trees));
  for (Tree& t : f.trees) {
    const int nodes = static_cast<int>(r.u32());
    for (int i = 0; i < nodes; ++i) {
      t.feature.push_back(r.i32());
      t.threshold.push_back(r.f64());
      t.left.push_back(r.i32());
      t.right.push_back(r.i32());
      for (int k = 0; k < f.class_count; ++k) t.distribution.push_back(r.f64());
    }
    for (int i = 0; i < nodes; ++i) {
      if (t.is_leaf(i)) continue;
      require(t.feature[i] < f.feature_count && t.left[i] > i && t.left[i] < nodes &&
                  t.right[i] > i && t.right[i] < nodes,
              "corrupt forest node");
    }
  }
  require(r.exhausted(), "trailing bytes after forest payload");
  return f;
}

}  // namespace forest2mlp
