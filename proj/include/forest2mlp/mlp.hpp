#pragma once

// Multilayer-perceptron student trained on soft targets with Adam.

#include "forest2mlp/common.hpp"
#include "forest2mlp/container.hpp"

#include <array>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace forest2mlp {

enum class Activation : std::uint32_t { relu = 0, tanh = 1 };

inline std::string to_string(Activation a) {
  return a == Activation::relu ? "relu" : "tanh";
}

inline constexpr std::array<int, 5> kLayerChoices = {1, 2, 3, 4, 5};
inline constexpr std::array<int, 5> kNodeChoices = {10, 25, 100, 200, 400};
inline constexpr std::array<double, 3> kBottleneckChoices = {0.2, 0.5, 1.0};
inline constexpr std::array<Activation, 2> kActivationChoices = {Activation::relu,
                                                                 Activation::tanh};
inline constexpr std::array<double, 4> kLearningRateChoices = {1e-2, 1e-3, 1e-4,
                                                               1e-5};

/// One point of the student grid.
struct StudentConfig {
  int layers = 1;
  int nodes_per_layer = 100;
  double bottleneck_ratio = 1.0;
  Activation activation = Activation::relu;
  double init_learning_rate = 1e-3;

  bool operator==(const StudentConfig&) const = default;

  bool in_grid_domain() const {
    auto has = [](const auto& options, auto v) {
      return std::find(options.begin(), options.end(), v) != options.end();
    };
    return has(kLayerChoices, layers) && has(kNodeChoices, nodes_per_layer) &&
           has(kBottleneckChoices, bottleneck_ratio) &&
           has(kActivationChoices, activation) &&
           has(kLearningRateChoices, init_learning_rate);
  }
};

/// "L3-N100-B0.5-relu-lr0.01"
inline std::string to_string(const StudentConfig& c) {
  return "L" + std::to_string(c.layers) + "-N" + std::to_string(c.nodes_per_layer) +
         "-B" + format_double(c.bottleneck_ratio) + "-" + to_string(c.activation) +
         "-lr" + format_double(c.init_learning_rate);
}

/// Hidden layer widths. Networks with three or more hidden layers shrink the
/// middle layer (index L/2) to ceil(ratio * nodes); shallower ones ignore the
/// ratio.
inline std::vector<int> resolve_architecture(const StudentConfig& cfg,
                                             int /*input_dim*/ = 0,
                                             int /*classes*/ = 0) {
  require(cfg.layers >= 1, "student config needs at least one hidden layer");
  require(cfg.nodes_per_layer >= 1, "student config needs nodes_per_layer >= 1");
  std::vector<int> sizes(static_cast<std::size_t>(cfg.layers), cfg.nodes_per_layer);
  if (cfg.layers >= 3) {
    const double scaled = cfg.bottleneck_ratio * cfg.nodes_per_layer;
    sizes[cfg.layers / 2] = std::max(1, static_cast<int>(std::ceil(scaled - 1e-9)));
  }
  return sizes;
}

struct Mlp {
  std::vector<Matrix> weights;  // layer l: out x in
  std::vector<Vector> biases;
  Activation activation = Activation::relu;

  int input_dim() const { return static_cast<int>(weights.front().cols()); }
  int output_dim() const { return static_cast<int>(weights.back().rows()); }
  int layer_count() const { return static_cast<int>(weights.size()); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights.size(); ++l)
      n += static_cast<std::size_t>(weights[l].size() + biases[l].size());
    return n;
  }

  bool operator==(const Mlp& o) const {
    if (activation != o.activation || weights.size() != o.weights.size())
      return false;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      if (weights[l].rows() != o.weights[l].rows() ||
          weights[l].cols() != o.weights[l].cols() || weights[l] != o.weights[l] ||
          biases[l] != o.biases[l])
        return false;
    }
    return true;
  }
};

/// Zero-initialized network with the given layer widths.
inline Mlp make_mlp(int input_dim, const std::vector<int>& hidden, int classes,
                    Activation activation) {
  require(input_dim >= 1 && classes >= 2, "make_mlp: bad dimensions");
  Mlp net;
  net.activation = activation;
  int fan_in = input_dim;
  std::vector<int> widths = hidden;
  widths.push_back(classes);
  for (int w : widths) {
    require(w >= 1, "make_mlp: layer width must be >= 1");
    net.weights.push_back(Matrix::Zero(w, fan_in));
    net.biases.push_back(Vector::Zero(w));
    fan_in = w;
  }
  return net;
}

/// He-uniform weights for relu networks, Glorot-uniform for tanh; zero biases.
inline void initialize(Mlp& net, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& w : net.weights) {
    const double fan_in = static_cast<double>(w.cols());
    const double fan_out = static_cast<double>(w.rows());
    const double limit = net.activation == Activation::relu
                             ? std::sqrt(6.0 / fan_in)
                             : std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = dist(rng);
  }
  for (auto& b : net.biases) b.setZero();
}

namespace detail {

inline void activate(Matrix& z, Activation a) {
  if (a == Activation::relu)
    z = z.cwiseMax(0.0);
  else
    z = z.array().tanh().matrix();
}

// Row-wise log-softmax.
inline Matrix log_softmax(const Matrix& z) {
  Matrix out(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double m = z.row(i).maxCoeff();
    const double lse = m + std::log((z.row(i).array() - m).exp().sum());
    out.row(i) = z.row(i).array() - lse;
  }
  return out;
}

struct ForwardPass {
  std::vector<Matrix> activations;  // [0] = input, [l+1] = output of layer l
  Matrix logits;
};

inline ForwardPass forward_pass(const Mlp& net, const Matrix& x) {
  require(x.cols() == net.input_dim(),
          "forward: expected " + std::to_string(net.input_dim()) +
              " columns, got " + std::to_string(x.cols()));
  ForwardPass fp;
  fp.activations.reserve(net.weights.size());
  fp.activations.push_back(x);
  const int last = net.layer_count() - 1;
  for (int l = 0; l < last; ++l) {
    Matrix z = fp.activations.back() * net.weights[l].transpose();
    z.rowwise() += net.biases[l].transpose();
    activate(z, net.activation);
    fp.activations.push_back(std::move(z));
  }
  fp.logits = fp.activations.back() * net.weights[last].transpose();
  fp.logits.rowwise() += net.biases[last].transpose();
  return fp;
}

}  // namespace detail

/// Class posteriors, one softmax row per input row.
inline Matrix forward(const Mlp& net, const Matrix& x) {
  return detail::log_softmax(detail::forward_pass(net, x).logits)
      .array()
      .exp()
      .matrix();
}

struct Gradients {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
};

struct LossAndGrad {
  double loss = 0.0;
  Gradients grad;
};

inline void check_soft_targets(const Matrix& targets, int classes) {
  require(targets.cols() == classes,
          "targets have " + std::to_string(targets.cols()) + " columns, network outputs " +
              std::to_string(classes));
  for (Eigen::Index i = 0; i < targets.rows(); ++i) {
    require((targets.row(i).array() >= 0.0).all(), "target row has negative entries");
    require(std::abs(targets.row(i).sum() - 1.0) <= 1e-6,
            "target row " + std::to_string(i) + " does not sum to 1");
  }
}

namespace detail {

// Mean cross-entropy and its exact gradient, without target validation.
inline LossAndGrad loss_and_grad_unchecked(const Mlp& net, const Matrix& x,
                                           const Matrix& targets) {
  const auto fp = forward_pass(net, x);
  const Matrix logp = log_softmax(fp.logits);
  const double m = static_cast<double>(x.rows());

  LossAndGrad out;
  out.loss = -(targets.array() * logp.array()).sum() / m;

  const int layers = net.layer_count();
  out.grad.weights.resize(static_cast<std::size_t>(layers));
  out.grad.biases.resize(static_cast<std::size_t>(layers));
  Matrix delta = (logp.array().exp().matrix() - targets) / m;
  for (int l = layers - 1; l >= 0; --l) {
    out.grad.weights[l] = delta.transpose() * fp.activations[l];
    out.grad.biases[l] = delta.colwise().sum().transpose();
    if (l == 0) break;
    Matrix back = delta * net.weights[l];
    const Matrix& a = fp.activations[l];
    if (net.activation == Activation::relu)
      back = (a.array() > 0.0).select(back, 0.0);
    else
      back = back.array() * (1.0 - a.array().square());
    delta = std::move(back);
  }
  return out;
}

}  // namespace detail

/// Mean over rows of -sum_c target_c * log p_c, with exact gradients for every
/// weight and bias.
inline LossAndGrad loss_and_grad(const Mlp& net, const Matrix& x,
                                 const Matrix& targets) {
  require(targets.rows() == x.rows(), "loss_and_grad: row count mismatch");
  check_soft_targets(targets, net.output_dim());
  return detail::loss_and_grad_unchecked(net, x, targets);
}

// ---------------------------------------------------------------------------
// Training

enum class LabelMode { soft, hard };

struct TrainOptions {
  int max_epochs = 200;
  int batch_size = 200;  // clipped to n
  std::uint64_t seed = 0;
  double tolerance = 1e-4;
  int patience = 10;
  LabelMode label_mode = LabelMode::soft;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainResult {
  Mlp net;
  std::vector<double> loss_curve;  // epoch-mean loss
  bool converged = false;          // stopped by the tolerance rule
};

/// One-hot argmax of each row (ties to the lowest class).
inline Matrix harden(const Matrix& targets) {
  Matrix out = Matrix::Zero(targets.rows(), targets.cols());
  const Labels hard = argmax_rows(targets);
  for (Eigen::Index i = 0; i < targets.rows(); ++i) out(i, hard[i]) = 1.0;
  return out;
}

/// Minibatch Adam on mean cross-entropy. Stops after `max_epochs` or once the
/// epoch loss has failed to improve on the best seen by at least `tolerance`
/// for `patience` consecutive epochs. Throws DivergenceError on a non-finite
/// loss.
inline TrainResult train_student_detailed(const Matrix& x, const Matrix& soft_targets,
                                          const StudentConfig& cfg,
                                          const TrainOptions& opts) {
  const Eigen::Index n = x.rows();
  require(n >= 1, "train_student: empty training set");
  require(soft_targets.rows() == n, "train_student: target row count mismatch");
  require(opts.max_epochs >= 1 && opts.batch_size >= 1,
          "train_student: max_epochs and batch_size must be positive");
  const int classes = static_cast<int>(soft_targets.cols());
  check_soft_targets(soft_targets, classes);
  const Matrix targets =
      opts.label_mode == LabelMode::hard ? harden(soft_targets) : soft_targets;

  TrainResult result;
  Mlp& net = result.net;
  net = make_mlp(static_cast<int>(x.cols()), resolve_architecture(cfg), classes,
                 cfg.activation);
  std::mt19937_64 rng(opts.seed);
  initialize(net, rng());

  const int layers = net.layer_count();
  std::vector<Matrix> mw, vw;
  std::vector<Vector> mb, vb;
  for (int l = 0; l < layers; ++l) {
    mw.push_back(Matrix::Zero(net.weights[l].rows(), net.weights[l].cols()));
    vw.push_back(mw.back());
    mb.push_back(Vector::Zero(net.biases[l].size()));
    vb.push_back(mb.back());
  }

  const Eigen::Index batch = std::min<Eigen::Index>(opts.batch_size, n);
  IndexList order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  double best_loss = std::numeric_limits<double>::infinity();
  int stalled = 0;
  long long step = 0;

  for (int epoch = 0; epoch < opts.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (Eigen::Index start = 0; start < n; start += batch) {
      const Eigen::Index count = std::min(batch, n - start);
      IndexList rows(order.begin() + start, order.begin() + start + count);
      const Matrix xb = select_rows(x, rows);
      const Matrix tb = select_rows(targets, rows);
      auto lg = detail::loss_and_grad_unchecked(net, xb, tb);
      if (!std::isfinite(lg.loss))
        throw DivergenceError(epoch, "student training diverged at epoch " +
                                         std::to_string(epoch));
      epoch_loss += lg.loss * static_cast<double>(count);

      ++step;
      const double lr = cfg.init_learning_rate *
                        std::sqrt(1.0 - std::pow(opts.beta2, double(step))) /
                        (1.0 - std::pow(opts.beta1, double(step)));
      for (int l = 0; l < layers; ++l) {
        mw[l] = opts.beta1 * mw[l] + (1.0 - opts.beta1) * lg.grad.weights[l];
        vw[l] = opts.beta2 * vw[l] +
                (1.0 - opts.beta2) * lg.grad.weights[l].cwiseProduct(lg.grad.weights[l]);
        mb[l] = opts.beta1 * mb[l] + (1.0 - opts.beta1) * lg.grad.biases[l];
        vb[l] = opts.beta2 * vb[l] +
                (1.0 - opts.beta2) * lg.grad.biases[l].cwiseProduct(lg.grad.biases[l]);
        net.weights[l].array() -=
            lr * mw[l].array() / (vw[l].array().sqrt() + opts.epsilon);
        net.biases[l].array() -=
            lr * mb[l].array() / (vb[l].array().sqrt() + opts.epsilon);
      }
    }
    epoch_loss /= static_cast<double>(n);
    result.loss_curve.push_back(epoch_loss);

    if (epoch_loss > best_loss - opts.tolerance)
      ++stalled;
    else
      stalled = 0;
    best_loss = std::min(best_loss, epoch_loss);
    if (stalled >= opts.patience) {
      result.converged = true;
      break;
    }
  }
  return result;
}

inline Mlp train_student(const Matrix& x, const Matrix& soft_targets,
                         const StudentConfig& cfg, const TrainOptions& opts) {
  return train_student_detailed(x, soft_targets, cfg, opts).net;
}

inline Labels predict(const Mlp& net, const Matrix& x) {
  return argmax_rows(forward(net, x));
}

// ---------------------------------------------------------------------------
// Serialization. Mlp payload:
//   u32 activation (0 relu, 1 tanh), u32 layer_count,
//   per layer: u32 rows (out), u32 cols (in), f64[rows*cols] weights
//   row-major, f64[rows] bias

inline std::vector<std::uint8_t> serialize(const Mlp& net) {
  ByteWriter w(PayloadKind::mlp);
  w.u32(static_cast<std::uint32_t>(net.activation));
  w.u32(static_cast<std::uint32_t>(net.layer_count()));
  for (int l = 0; l < net.layer_count(); ++l) {
    const Matrix& m = net.weights[l];
    w.u32(static_cast<std::uint32_t>(m.rows()));
    w.u32(static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) w.f64(m(i, j));
    for (Eigen::Index i = 0; i < m.rows(); ++i) w.f64(net.biases[l][i]);
  }
  return w.bytes();
}

inline Mlp deserialize_mlp(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes, PayloadKind::mlp);
  Mlp net;
  const std::uint32_t act = r.u32();
  require(act <= 1, "corrupt mlp activation tag");
  net.activation = static_cast<Activation>(act);
  const int layers = static_cast<int>(r.u32());
  require(layers >= 1, "corrupt mlp layer count");
  for (int l = 0; l < layers; ++l) {
    const Eigen::Index rows = r.u32(), cols = r.u32();
    if (l > 0) require(cols == net.weights.back().rows(), "mlp layers do not chain");
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = r.f64();
    Vector b(rows);
    for (Eigen::Index i = 0; i < rows; ++i) b[i] = r.f64();
    net.weights.push_back(std::move(m));
    net.biases.push_back(std::move(b));
  }
  require(r.exhausted(), "trailing bytes after mlp payload");
  return net;
}

}  // namespace forest2mlp
