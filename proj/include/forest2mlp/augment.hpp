#pragma once

// Density models over the teacher's input space and samplers that draw extra
// unlabeled inputs from them. The teacher labels the draws, extending the
// transfer set without new annotation.

#include "forest2mlp/common.hpp"
#include "forest2mlp/forest.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <variant>
#include <vector>

namespace forest2mlp {

/// Lower bound for variances and bandwidths.
inline constexpr double kVarianceFloor = 1e-6;

/// Diagonal-covariance Gaussian mixture.
struct GmmModel {
  Vector weights;         // k, positive, sums to 1
  Matrix means;           // k x d
  Matrix variances;       // k x d, each >= kVarianceFloor
  std::vector<double> log_likelihood_trace;  // mean per-sample log-likelihood per EM iteration
};

/// Gaussian product-kernel density estimate.
struct KdeModel {
  Matrix points;     // n x d
  Vector bandwidth;  // d
};

/// Axis-aligned box.
struct UniformModel {
  Vector lower;
  Vector upper;
};

using DensityModel = std::variant<GmmModel, KdeModel, UniformModel>;

namespace detail {

inline double log_sum_exp(const Eigen::Ref<const RowVector>& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

// log N(x | mean, diag(var)) for every row of x and every component.
inline Matrix component_log_densities(const GmmModel& g, const Matrix& x) {
  const Eigen::Index n = x.rows(), k = g.weights.size(), d = x.cols();
  const double log2pi = std::log(2.0 * std::numbers::pi);
  Matrix out(n, k);
  for (Eigen::Index c = 0; c < k; ++c) {
    const double log_norm = -0.5 * (d * log2pi + g.variances.row(c).array().log().sum());
    const RowVector inv_var = g.variances.row(c).cwiseInverse();
    for (Eigen::Index i = 0; i < n; ++i) {
      const double q =
          ((x.row(i) - g.means.row(c)).array().square() * inv_var.array()).sum();
      out(i, c) = std::log(g.weights[c]) + log_norm - 0.5 * q;
    }
  }
  return out;
}

// k-means++ seeding: first center uniform, then proportional to squared
// distance from the nearest chosen center.
inline Matrix kmeans_pp_centers(const Matrix& x, int k, std::mt19937_64& rng) {
  const Eigen::Index n = x.rows();
  Matrix centers(k, x.cols());
  std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
  centers.row(0) = x.row(first(rng));
  Vector dist2 = (x.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < k; ++c) {
    const double total = dist2.sum();
    Eigen::Index chosen = 0;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng), acc = 0.0;
      chosen = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += dist2[i];
        if (acc >= target && dist2[i] > 0.0) {
          chosen = i;
          break;
        }
      }
    } else {
      chosen = first(rng);
    }
    centers.row(c) = x.row(chosen);
    dist2 = dist2.cwiseMin((x.rowwise() - centers.row(c)).rowwise().squaredNorm());
  }
  return centers;
}

}  // namespace detail

/// Per-row log density.
inline Vector log_density(const GmmModel& g, const Matrix& x) {
  require(x.cols() == g.means.cols(), "log_density: dimension mismatch");
  const Matrix comp = detail::component_log_densities(g, x);
  Vector out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) out[i] = detail::log_sum_exp(comp.row(i));
  return out;
}

inline double mean_log_likelihood(const GmmModel& g, const Matrix& x) {
  return log_density(g, x).mean();
}

/// EM for a diagonal GMM, seeded by k-means++. Stops when the mean
/// log-likelihood improves by less than `tol` or after `max_iters` E-steps.
inline GmmModel fit_gmm(const Matrix& x, int k, std::uint64_t seed,
                        int max_iters = 100, double tol = 1e-6) {
  const Eigen::Index n = x.rows(), d = x.cols();
  require(k >= 1, "fit_gmm: need at least one component");
  require(n >= k, "fit_gmm: fewer samples than components");
  require(d >= 1, "fit_gmm: no features");

  std::mt19937_64 rng(seed);
  GmmModel g;
  g.means = detail::kmeans_pp_centers(x, k, rng);
  const RowVector mu = x.colwise().mean();
  const RowVector global_var =
      ((x.rowwise() - mu).array().square().colwise().sum() / double(n))
          .max(kVarianceFloor);
  g.variances = global_var.replicate(k, 1);
  g.weights = Vector::Constant(k, 1.0 / k);

  for (int iter = 0; iter < max_iters; ++iter) {
    // E-step
    Matrix resp = detail::component_log_densities(g, x);
    double ll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double lse = detail::log_sum_exp(resp.row(i));
      ll += lse;
      resp.row(i) = (resp.row(i).array() - lse).exp();
    }
    ll /= static_cast<double>(n);
    const bool done = !g.log_likelihood_trace.empty() &&
                      ll - g.log_likelihood_trace.back() < tol;
    g.log_likelihood_trace.push_back(ll);
    if (done) break;
    if (iter + 1 == max_iters) break;

    // M-step; the variance floor is the constrained maximizer.
    const Vector nk = resp.colwise().sum().transpose();
    for (int c = 0; c < k; ++c) {
      if (nk[c] <= 1e-12) continue;  // keep a vacated component as is
      g.means.row(c) = (resp.col(c).transpose() * x) / nk[c];
      const Matrix centered = x.rowwise() - g.means.row(c);
      g.variances.row(c) =
          ((resp.col(c).transpose() * centered.array().square().matrix()) / nk[c])
              .array()
              .max(kVarianceFloor);
    }
    g.weights = (nk / static_cast<double>(n)).cwiseMax(1e-300);
    g.weights /= g.weights.sum();
  }
  return g;
}

/// Silverman's rule per dimension: h = 1.06 * sd * n^(-1/5), scaled by
/// `bandwidth_scale` and floored at kVarianceFloor.
inline KdeModel fit_kde(const Matrix& x, double bandwidth_scale = 1.0) {
  const Eigen::Index n = x.rows();
  require(n >= 2, "fit_kde: need at least 2 samples");
  require(bandwidth_scale > 0.0, "fit_kde: bandwidth scale must be positive");
  KdeModel m;
  m.points = x;
  m.bandwidth.resize(x.cols());
  const double factor = 1.06 * std::pow(static_cast<double>(n), -0.2);
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double mean = x.col(j).mean();
    const double sd =
        std::sqrt((x.col(j).array() - mean).square().sum() / double(n - 1));
    m.bandwidth[j] = std::max(kVarianceFloor, bandwidth_scale * factor * sd);
  }
  return m;
}

inline UniformModel fit_uniform(const Matrix& x) {
  require(x.rows() >= 1, "fit_uniform: need at least 1 sample");
  return UniformModel{x.colwise().minCoeff().transpose(),
                      x.colwise().maxCoeff().transpose()};
}

inline Eigen::Index dimension(const DensityModel& model) {
  return std::visit(
      [](const auto& m) -> Eigen::Index {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, GmmModel>) return m.means.cols();
        else if constexpr (std::is_same_v<T, KdeModel>) return m.points.cols();
        else return m.lower.size();
      },
      model);
}

/// m i.i.d. draws; a pure function of (model, m, seed).
inline Matrix sample(const DensityModel& model, int m, std::uint64_t seed) {
  require(m >= 0, "sample: negative count");
  const Eigen::Index d = dimension(model);
  Matrix out(m, d);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::visit(
      [&](const auto& model_) {
        using T = std::decay_t<decltype(model_)>;
        if constexpr (std::is_same_v<T, GmmModel>) {
          std::discrete_distribution<int> pick(model_.weights.data(),
                                               model_.weights.data() + model_.weights.size());
          for (int i = 0; i < m; ++i) {
            const int c = pick(rng);
            for (Eigen::Index j = 0; j < d; ++j)
              out(i, j) = model_.means(c, j) +
                          std::sqrt(model_.variances(c, j)) * normal(rng);
          }
        } else if constexpr (std::is_same_v<T, KdeModel>) {
          std::uniform_int_distribution<Eigen::Index> pick(0, model_.points.rows() - 1);
          for (int i = 0; i < m; ++i) {
            const Eigen::Index p = pick(rng);
            for (Eigen::Index j = 0; j < d; ++j)
              out(i, j) = model_.points(p, j) + model_.bandwidth[j] * normal(rng);
          }
        } else {
          std::uniform_real_distribution<double> unit(0.0, 1.0);
          for (int i = 0; i < m; ++i)
            for (Eigen::Index j = 0; j < d; ++j) {
              const double lo = model_.lower[j], hi = model_.upper[j];
              out(i, j) = lo == hi ? lo : lo + (hi - lo) * unit(rng);
            }
        }
      },
      model);
  return out;
}

struct AugmentedSet {
  Matrix inputs;       // (n + m) x d, base rows first
  Matrix soft_labels;  // (n + m) x C
};

/// Base rows keep their positions; m sampled rows are appended, and every row
/// is labelled with the teacher's posterior.
inline AugmentedSet augment_training_set(const Forest& teacher, const Matrix& base,
                                         const DensityModel& model, int m,
                                         std::uint64_t seed) {
  require(base.cols() == teacher.feature_count,
          "augment_training_set: base width does not match teacher");
  require(m == 0 || dimension(model) == base.cols(),
          "augment_training_set: density model width does not match base");
  AugmentedSet out;
  out.inputs.resize(base.rows() + m, base.cols());
  out.inputs.topRows(base.rows()) = base;
  if (m > 0) out.inputs.bottomRows(m) = sample(model, m, seed);
  out.soft_labels = predict_proba(teacher, out.inputs);
  return out;
}

enum class SamplerKind { none, gmm, kde, uniform };

struct AugmentSettings {
  SamplerKind sampler = SamplerKind::none;
  int components = 4;       // GMM only
  double multiplier = 1.0;  // m / n
};

inline DensityModel fit_density(const Matrix& x, const AugmentSettings& s,
                                std::uint64_t seed) {
  switch (s.sampler) {
    case SamplerKind::gmm:
      return fit_gmm(x, std::min<int>(s.components, static_cast<int>(x.rows())), seed);
    case SamplerKind::kde:
      return fit_kde(x);
    case SamplerKind::uniform:
      return fit_uniform(x);
    case SamplerKind::none:
      break;
  }
  throw Error("fit_density: no sampler selected");
}

}  // namespace forest2mlp
