#pragma once

#include "forest2mlp/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace f2m_test {

// |analytic - numeric| / max(|analytic|, |numeric|, floor). The floor keeps
// parameters whose true gradient is zero (dead relu units) from turning
// rounding noise into a huge ratio.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Central differences on every weight and bias of `net`; returns the largest
// relative error against loss_and_grad.
inline double max_gradient_error(forest2mlp::Mlp net, const forest2mlp::Matrix& x,
                                 const forest2mlp::Matrix& targets, double eps = 1e-5) {
  using forest2mlp::loss_and_grad;
  const auto analytic = loss_and_grad(net, x, targets).grad;
  double worst = 0.0;
  auto probe = [&](double& param, double grad) {
    const double saved = param;
    param = saved + eps;
    const double up = loss_and_grad(net, x, targets).loss;
    param = saved - eps;
    const double down = loss_and_grad(net, x, targets).loss;
    param = saved;
    worst = std::max(worst, relative_error(grad, (up - down) / (2 * eps)));
  };
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    for (Eigen::Index i = 0; i < net.weights[l].rows(); ++i)
      for (Eigen::Index j = 0; j < net.weights[l].cols(); ++j)
        probe(net.weights[l](i, j), analytic.weights[l](i, j));
    for (Eigen::Index i = 0; i < net.biases[l].size(); ++i)
      probe(net.biases[l][i], analytic.biases[l][i]);
  }
  return worst;
}

// Initialization leaves biases at zero, so a unit fed only by dead relus sits
// exactly on the kink where finite differences are one-sided. Checks run at a
// generic point instead.
inline void randomize_biases(forest2mlp::Mlp& net, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto& b : net.biases)
    for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = u(rng);
}

// Random soft targets: rows drawn from a flat Dirichlet.
inline forest2mlp::Matrix random_soft_targets(int rows, int classes, std::mt19937_64& rng) {
  std::gamma_distribution<double> g(1.0, 1.0);
  forest2mlp::Matrix t(rows, classes);
  for (int i = 0; i < rows; ++i) {
    for (int c = 0; c < classes; ++c) t(i, c) = g(rng) + 1e-3;
    t.row(i) /= t.row(i).sum();
  }
  return t;
}

}  // namespace f2m_test
