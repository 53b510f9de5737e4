#pragma once

// Independent reference implementations used as test oracles. These avoid the
// library code paths they check.

#include "forest2mlp/common.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

namespace f2m_test {

using forest2mlp::Labels;
using forest2mlp::Matrix;

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("f2m-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

  std::string write(const std::string& name, const std::string& text) const {
    std::ofstream(path_ / name) << text;
    return file(name);
  }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline double gini_direct(const std::vector<int>& counts) {
  double n = 0;
  for (int c : counts) n += c;
  if (n == 0) return 0.0;
  double g = 1.0;
  for (int c : counts) g -= (c / n) * (c / n);
  return g;
}

struct OracleSplit {
  int feature = -1;
  double threshold = 0.0;
  double gain = 0.0;
};

// Weighted Gini decrease of splitting at `threshold` on `feature`, by direct
// counting over every row.
inline double split_gain(const Matrix& x, const Labels& y, int classes, int feature,
                         double threshold) {
  std::vector<int> all(classes, 0), left(classes, 0), right(classes, 0);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    ++all[y[i]];
    ++(x(i, feature) <= threshold ? left : right)[y[i]];
  }
  double nl = 0, nr = 0;
  for (int c = 0; c < classes; ++c) nl += left[c], nr += right[c];
  const double n = nl + nr;
  return gini_direct(all) - (nl / n) * gini_direct(left) - (nr / n) * gini_direct(right);
}

// Exhaustive search over every (feature, midpoint of distinct adjacent values)
// pair, respecting the minimum leaf size.
inline std::optional<OracleSplit> brute_force_split(const Matrix& x, const Labels& y,
                                                    const std::vector<int>& features,
                                                    int min_leaf = 1) {
  int classes = 0;
  for (int v : y) classes = std::max(classes, v + 1);
  std::optional<OracleSplit> best;
  for (int f : features) {
    std::vector<double> values(x.col(f).data(), x.col(f).data() + x.rows());
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    for (std::size_t i = 0; i + 1 < values.size(); ++i) {
      const double t = 0.5 * (values[i] + values[i + 1]);
      int nl = 0;
      for (Eigen::Index r = 0; r < x.rows(); ++r) nl += x(r, f) <= t;
      if (nl < min_leaf || x.rows() - nl < min_leaf) continue;
      const double g = split_gain(x, y, classes, f, t);
      if (!best || g > best->gain) best = OracleSplit{f, t, g};
    }
  }
  return best;
}

// Cyclic Jacobi eigen-decomposition of a symmetric matrix held in nested
// vectors. Returns eigenvalues sorted descending with matching unit
// eigenvectors as columns of `vectors`.
struct SymmetricEigen {
  std::vector<double> values;
  std::vector<std::vector<double>> vectors;  // vectors[row][col]
};

inline SymmetricEigen jacobi_eigen(std::vector<std::vector<double>> a) {
  const std::size_t n = a.size();
  std::vector<std::vector<double>> v(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) v[i][i] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](auto i, auto j) { return a[i][i] > a[j][j]; });
  SymmetricEigen out;
  out.vectors.assign(n, std::vector<double>(n));
  for (std::size_t c = 0; c < n; ++c) {
    out.values.push_back(a[order[c]][order[c]]);
    for (std::size_t r = 0; r < n; ++r) out.vectors[r][c] = v[r][order[c]];
  }
  return out;
}

// Population covariance by explicit double loops.
inline std::vector<std::vector<double>> covariance_direct(const Matrix& x) {
  const auto n = static_cast<std::size_t>(x.rows()), d = static_cast<std::size_t>(x.cols());
  std::vector<double> mean(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t i = 0; i < n; ++i) mean[j] += x(i, j);
    mean[j] /= static_cast<double>(n);
  }
  std::vector<std::vector<double>> cov(d, std::vector<double>(d, 0.0));
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = 0; b < d; ++b) {
      for (std::size_t i = 0; i < n; ++i) cov[a][b] += (x(i, a) - mean[a]) * (x(i, b) - mean[b]);
      cov[a][b] /= static_cast<double>(n);
    }
  return cov;
}

// Angle between two lines (sign-insensitive), via the chord length, which
// stays accurate for tiny angles.
inline double line_angle(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i], na += a[i] * a[i], nb += b[i] * b[i];
  const double sign = dot < 0 ? -1.0 : 1.0;
  double chord = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] / std::sqrt(na) - sign * b[i] / std::sqrt(nb);
    chord += diff * diff;
  }
  return 2.0 * std::asin(std::min(1.0, std::sqrt(chord) / 2.0));
}

inline Matrix random_matrix(int rows, int cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) m(i, j) = n(rng);
  return m;
}

}  // namespace f2m_test
