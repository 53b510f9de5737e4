#pragma once

// Synthetic classification tasks for desk-scale experiments.

#include "forest2mlp/data.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace forest2mlp::synthetic {

inline Dataset two_gaussians(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  Matrix x(n, 2);
  Labels y(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    y[i] = i % 2;
    const double cx = y[i] ? 1.25 : -1.25;
    x(i, 0) = cx + noise(rng);
    x(i, 1) = noise(rng);
  }
  return make_dataset("two_gaussians", std::move(x), std::move(y), 2);
}

/// Uniform on [-1, 1]^2, class = sign(x0 * x1) > 0.
inline Dataset xor_task(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Matrix x(n, 2);
  Labels y(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    x(i, 0) = u(rng);
    x(i, 1) = u(rng);
    y[i] = x(i, 0) * x(i, 1) > 0 ? 1 : 0;
  }
  return make_dataset("xor", std::move(x), std::move(y), 2);
}

inline Dataset rings(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> noise(0.0, 0.15);
  Matrix x(n, 2);
  Labels y(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    y[i] = i % 2;
    const double r = (y[i] ? 2.0 : 1.0) + noise(rng);
    const double a = angle(rng);
    x(i, 0) = r * std::cos(a);
    x(i, 1) = r * std::sin(a);
  }
  return make_dataset("rings", std::move(x), std::move(y), 2);
}

/// Two interleaved arms of an Archimedean spiral, 1.5 turns each.
inline Dataset spirals(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.08);
  Matrix x(n, 2);
  Labels y(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    y[i] = i % 2;
    const double t = 0.25 + 0.75 * std::sqrt(u(rng));
    const double a = 3.0 * std::numbers::pi * t + (y[i] ? std::numbers::pi : 0.0);
    x(i, 0) = t * std::cos(a) + noise(rng);
    x(i, 1) = t * std::sin(a) + noise(rng);
  }
  return make_dataset("spirals", std::move(x), std::move(y), 2);
}

/// Gaussian clusters on distinct vertices of {-1, 1}^8, four per class.
inline Dataset hypercube_corners(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.6);
  std::vector<unsigned> vertices(256);
  std::iota(vertices.begin(), vertices.end(), 0u);
  std::shuffle(vertices.begin(), vertices.end(), rng);
  Matrix x(n, 8);
  Labels y(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int cluster = i % 8;
    y[i] = cluster % 2;
    for (int j = 0; j < 8; ++j)
      x(i, j) = ((vertices[cluster] >> j) & 1u ? 1.0 : -1.0) + noise(rng);
  }
  return make_dataset("hypercube_corners", std::move(x), std::move(y), 2);
}

/// Three blobs with 70/20/10 class shares; ~5% of cells are missing.
inline Dataset imbalanced_blobs(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double centers[3][2] = {{0.0, 0.0}, {2.5, 0.0}, {1.25, 2.2}};
  Matrix x(n, 3);
  Labels y(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double r = static_cast<double>(i % 10);
    y[i] = r < 7 ? 0 : (r < 9 ? 1 : 2);
    x(i, 0) = centers[y[i]][0] + noise(rng);
    x(i, 1) = centers[y[i]][1] + noise(rng);
    x(i, 2) = noise(rng);
    for (int j = 0; j < 3; ++j)
      if (u(rng) < 0.05) x(i, j) = kMissing;
  }
  return make_dataset("imbalanced_blobs", std::move(x), std::move(y), 3);
}

/// Header row x0..x{d-1},label; missing cells are written as "?".
inline void write_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  for (Eigen::Index j = 0; j < ds.cols(); ++j) out << "x" << j << ',';
  out << "label\n";
  for (Eigen::Index i = 0; i < ds.rows(); ++i) {
    for (Eigen::Index j = 0; j < ds.cols(); ++j)
      out << (std::isnan(ds.features(i, j)) ? "?" : format_double(ds.features(i, j)))
          << ',';
    out << "c" << ds.labels[i] << '\n';
  }
}

/// The six synthetic desk tasks, in a fixed order.
inline std::vector<Dataset> desk_tasks(std::uint64_t seed) {
  return {two_gaussians(200, mix_seed(seed, 1)),   xor_task(200, mix_seed(seed, 2)),
          rings(200, mix_seed(seed, 3)),           spirals(200, mix_seed(seed, 4)),
          hypercube_corners(200, mix_seed(seed, 5)), imbalanced_blobs(240, mix_seed(seed, 6))};
}

}  // namespace forest2mlp::synthetic
