#pragma once

// Shrinking the student grid to a small complementary portfolio by greedy
// backward elimination.

#include "forest2mlp/common.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

namespace forest2mlp {

/// Tasks x configs table of cross-validated mean accuracies.
struct PerformanceMatrix {
  Matrix values;
  std::vector<std::string> task_names;
  std::vector<int> config_ids;

  int task_count() const { return static_cast<int>(values.rows()); }
  int config_count() const { return static_cast<int>(values.cols()); }

  int column_of(int config) const {
    auto it = std::find(config_ids.begin(), config_ids.end(), config);
    require(it != config_ids.end(), "config " + std::to_string(config) +
                                        " is not in the performance matrix");
    return static_cast<int>(it - config_ids.begin());
  }

  void validate() const {
    require(values.rows() == static_cast<Eigen::Index>(task_names.size()) &&
                values.cols() == static_cast<Eigen::Index>(config_ids.size()),
            "performance matrix labels do not match its shape");
    require(values.size() > 0, "performance matrix is empty");
    require(!values.hasNaN() && (values.array() >= 0.0).all() &&
                (values.array() <= 1.0).all(),
            "performance matrix entries must lie in [0, 1]");
  }
};

namespace detail {

inline double subset_score_columns(const Matrix& values, const std::vector<int>& columns) {
  require(!columns.empty(), "subset must be nonempty");
  double total = 0.0;
  for (Eigen::Index t = 0; t < values.rows(); ++t) {
    double best = values(t, columns.front());
    for (int c : columns) best = std::max(best, values(t, c));
    total += best;
  }
  return total / static_cast<double>(values.rows());
}

}  // namespace detail

/// Mean over tasks of the best accuracy available within `subset`
/// (given as config ids).
inline double best_subset_score(const PerformanceMatrix& pm, const std::vector<int>& subset) {
  require(!subset.empty(), "best_subset_score: empty subset");
  std::vector<int> cols;
  for (int id : subset) cols.push_back(pm.column_of(id));
  return detail::subset_score_columns(pm.values, cols);
}

inline double full_grid_score(const PerformanceMatrix& pm) {
  return best_subset_score(pm, pm.config_ids);
}

/// best_subset_score(full) - best_subset_score(subset).
inline double oracle_gap(const PerformanceMatrix& pm, const std::vector<int>& subset) {
  return full_grid_score(pm) - best_subset_score(pm, subset);
}

struct PortfolioTrace {
  std::vector<int> elimination_order;  // first removed first; last entry survives
  std::vector<double> score_by_size;   // index s-1 holds the score with s configs
  std::vector<double> gap_by_size;

  /// Config ids of the surviving subset of the given size.
  std::vector<int> subset_of_size(int size) const {
    require(size >= 1 && size <= static_cast<int>(elimination_order.size()),
            "subset size out of range");
    return std::vector<int>(elimination_order.end() - size, elimination_order.end());
  }
};

/// Repeatedly drops the config whose removal lowers best_subset_score the
/// least, re-evaluating every remaining candidate at each step. Equal drops
/// remove the higher config id.
inline PortfolioTrace greedy_reduce(const PerformanceMatrix& pm) {
  const int s = pm.config_count();
  require(s >= 1, "greedy_reduce: no configs");
  PortfolioTrace trace;
  trace.score_by_size.assign(static_cast<std::size_t>(s), 0.0);
  trace.gap_by_size.assign(static_cast<std::size_t>(s), 0.0);

  std::vector<int> alive(static_cast<std::size_t>(s));
  std::iota(alive.begin(), alive.end(), 0);
  const double full = detail::subset_score_columns(pm.values, alive);
  trace.score_by_size[s - 1] = full;

  // Removing a column only hurts tasks where it is the unique maximum, by the
  // margin to the runner-up, so each step costs O(tasks x alive).
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> drop(static_cast<std::size_t>(s));
  while (alive.size() > 1) {
    std::fill(drop.begin(), drop.end(), 0.0);
    for (Eigen::Index t = 0; t < pm.values.rows(); ++t) {
      int best = -1;
      double best_v = -inf, second_v = -inf;
      for (int c : alive) {
        const double v = pm.values(t, c);
        if (v > best_v) {
          second_v = best_v;
          best_v = v;
          best = c;
        } else if (v > second_v) {
          second_v = v;
        }
      }
      drop[best] += best_v - second_v;
    }
    int victim = alive.front();
    for (int c : alive) {
      if (drop[c] < drop[victim] ||
          (drop[c] == drop[victim] && pm.config_ids[c] > pm.config_ids[victim]))
        victim = c;
    }
    trace.elimination_order.push_back(pm.config_ids[victim]);
    alive.erase(std::find(alive.begin(), alive.end(), victim));
    trace.score_by_size[alive.size() - 1] =
        detail::subset_score_columns(pm.values, alive);
  }
  trace.elimination_order.push_back(pm.config_ids[alive.front()]);
  for (int size = 1; size <= s; ++size)
    trace.gap_by_size[size - 1] = std::max(0.0, full - trace.score_by_size[size - 1]);
  return trace;
}

}  // namespace forest2mlp
