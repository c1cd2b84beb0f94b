#pragma once

// MS4 / MS4N classifier: input projection, S4D block, GLU channel mixing,
// optional layer normalization, global average pooling and a two-layer head.

#include <cmath>
#include <concepts>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ms4/errors.hpp"
#include "ms4/ssm.hpp"

namespace ms4 {

inline constexpr double kLayerNormEps = 1e-5;

struct ModelConfig {
  int features = 1;
  int hidden = 64;
  int state = 64;
  int layers = 1;
  int classes = 2;
  int head_hidden = 0;  // 0 means "same as hidden"
  bool normalized = true;
  double dropout = 0.1;
  double dt_min = 1e-3;
  double dt_max = 1e-1;
  EigenInit eigen_init = EigenInit::kLinear;

  int head_width() const { return head_hidden > 0 ? head_hidden : hidden; }

  void check() const {
    if (features < 1 || hidden < 1 || layers < 1 || head_width() < 1) {
      throw ParameterError("model dimensions must be positive");
    }
    if (state < 2 || state % 2 != 0) {
      throw ParameterError("state dimension must be even and >= 2");
    }
    if (classes < 2) throw ParameterError("need at least 2 classes");
    if (!(dropout >= 0.0 && dropout < 1.0)) {
      throw ParameterError("dropout rate must be in [0, 1)");
    }
  }
};

/// One stacked block. Only the first block owns the F -> H projection;
/// gamma/beta exist only for the normalized variant.
template <typename Scalar>
struct Block {
  Matrix<Scalar> W1;
  RowVector<Scalar> b1;
  SsmParams<Scalar> ssm;
  Matrix<Scalar> W2;  // H x 2H
  RowVector<Scalar> b2;
  RowVector<Scalar> gamma, beta;

  bool has_projection() const { return W1.size() > 0; }
};

template <typename Scalar>
struct ModelParams {
  ModelConfig config;
  std::vector<Block<Scalar>> blocks;
  Matrix<Scalar> W3;  // H x H_head
  RowVector<Scalar> b3;
  Matrix<Scalar> W4;  // H_head x n_c
  RowVector<Scalar> b4;

  /// Calls fn(name, array) for every trainable array in a fixed order.
  template <typename Fn>
  void visit(Fn&& fn) {
    visit_impl(*this, fn);
  }
  template <typename Fn>
  void visit(Fn&& fn) const {
    visit_impl(*this, fn);
  }

  template <typename Other>
  ModelParams<Other> cast() const {
    ModelParams<Other> out;
    out.config = config;
    for (const auto& b : blocks) {
      out.blocks.push_back({b.W1.template cast<Other>(),
                            b.b1.template cast<Other>(),
                            b.ssm.template cast<Other>(),
                            b.W2.template cast<Other>(),
                            b.b2.template cast<Other>(),
                            b.gamma.template cast<Other>(),
                            b.beta.template cast<Other>()});
    }
    out.W3 = W3.template cast<Other>();
    out.b3 = b3.template cast<Other>();
    out.W4 = W4.template cast<Other>();
    out.b4 = b4.template cast<Other>();
    return out;
  }

 private:
  template <typename Self, typename Fn>
  static void visit_impl(Self& self, Fn& fn) {
    for (std::size_t i = 0; i < self.blocks.size(); ++i) {
      auto& b = self.blocks[i];
      const std::string p = "block" + std::to_string(i) + ".";
      if (b.has_projection()) {
        fn(p + "W1", b.W1);
        fn(p + "b1", b.b1);
      }
      fn(p + "ssm.a", b.ssm.a);
      fn(p + "ssm.b_imag", b.ssm.b_imag);
      fn(p + "ssm.B_re", b.ssm.B_re);
      fn(p + "ssm.B_im", b.ssm.B_im);
      fn(p + "ssm.C_re", b.ssm.C_re);
      fn(p + "ssm.C_im", b.ssm.C_im);
      fn(p + "ssm.D", b.ssm.D);
      fn(p + "ssm.log_delta", b.ssm.log_delta);
      fn(p + "W2", b.W2);
      fn(p + "b2", b.b2);
      if (self.config.normalized) {
        fn(p + "gamma", b.gamma);
        fn(p + "beta", b.beta);
      }
    }
    fn(std::string("head.W3"), self.W3);
    fn(std::string("head.b3"), self.b3);
    fn(std::string("head.W4"), self.W4);
    fn(std::string("head.b4"), self.b4);
  }
};

/// Dense layers use U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and bias.
template <typename Scalar>
ModelParams<Scalar> init_model(const ModelConfig& config, std::uint64_t seed) {
  config.check();
  std::mt19937_64 rng(seed);
  auto dense = [&rng](int in, int out, Matrix<Scalar>& W, RowVector<Scalar>& b) {
    std::uniform_real_distribution<double> u(-1.0 / std::sqrt(double(in)),
                                             1.0 / std::sqrt(double(in)));
    W.resize(in, out);
    for (Eigen::Index j = 0; j < W.cols(); ++j)
      for (Eigen::Index i = 0; i < W.rows(); ++i) W(i, j) = Scalar(u(rng));
    b.resize(out);
    for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = Scalar(u(rng));
  };
  const int H = config.hidden;
  ModelParams<Scalar> m;
  m.config = config;
  for (int l = 0; l < config.layers; ++l) {
    Block<Scalar> b;
    if (l == 0) dense(config.features, H, b.W1, b.b1);
    b.ssm = init_s4d_params<Scalar>(H, config.state, config.dt_min,
                                    config.dt_max, rng(), config.eigen_init);
    dense(H, 2 * H, b.W2, b.b2);
    if (config.normalized) {
      b.gamma = RowVector<Scalar>::Ones(H);
      b.beta = RowVector<Scalar>::Zero(H);
    }
    m.blocks.push_back(std::move(b));
  }
  dense(H, config.head_width(), m.W3, m.b3);
  dense(config.head_width(), config.classes, m.W4, m.b4);
  return m;
}

/// x W1 + b1 at every time step.
template <typename Scalar>
Matrix<Scalar> input_projection(const Matrix<Scalar>& x,
                                const Matrix<Scalar>& W1,
                                const RowVector<Scalar>& b1) {
  if (x.cols() != W1.rows() || W1.cols() != b1.size()) {
    throw ParameterError("input_projection: shape mismatch");
  }
  return (x * W1).rowwise() + b1;
}

template <std::floating_point Scalar>
Scalar sigmoid(Scalar v) {
  return Scalar(1) / (Scalar(1) + std::exp(-v));
}

/// Gated linear unit: [a | b] = y W2 + b2, returns a * sigmoid(b).
template <typename Scalar>
Matrix<Scalar> glu_mix(const Matrix<Scalar>& y, const Matrix<Scalar>& W2,
                       const RowVector<Scalar>& b2) {
  const Eigen::Index H = y.cols();
  if (W2.rows() != H || W2.cols() != 2 * H || b2.size() != 2 * H) {
    throw ParameterError("glu_mix: shape mismatch");
  }
  const Matrix<Scalar> y2 = (y * W2).rowwise() + b2;
  return y2.leftCols(H).cwiseProduct(
      y2.rightCols(H).unaryExpr([](Scalar v) { return sigmoid(v); }));
}

/// Per-time-step standardization across the feature axis (population
/// variance, eps inside the square root), without the affine part.
template <typename Scalar>
Matrix<Scalar> standardize_rows(const Matrix<Scalar>& g) {
  const Scalar eps = static_cast<Scalar>(kLayerNormEps);
  Matrix<Scalar> out(g.rows(), g.cols());
  for (Eigen::Index t = 0; t < g.rows(); ++t) {
    const Scalar mean = g.row(t).mean();
    const auto centered = (g.row(t).array() - mean).eval();
    const Scalar var = centered.square().mean();
    out.row(t) = centered / std::sqrt(var + eps);
  }
  return out;
}

template <typename Scalar>
Matrix<Scalar> layer_norm(const Matrix<Scalar>& g, const RowVector<Scalar>& gamma,
                          const RowVector<Scalar>& beta) {
  if (gamma.size() != g.cols() || beta.size() != g.cols()) {
    throw ParameterError("layer_norm: affine parameter shape mismatch");
  }
  return (standardize_rows(g) * gamma.asDiagonal()).rowwise() + beta;
}

/// Mean over time, then GELU(h W3 + b3) W4 + b4.
template <typename Scalar>
RowVector<Scalar> classify(const Matrix<Scalar>& g, const Matrix<Scalar>& W3,
                           const RowVector<Scalar>& b3,
                           const Matrix<Scalar>& W4,
                           const RowVector<Scalar>& b4) {
  if (g.rows() == 0) throw ParameterError("classify: empty sequence");
  if (g.cols() != W3.rows() || W3.cols() != b3.size() ||
      W3.cols() != W4.rows() || W4.cols() != b4.size()) {
    throw ParameterError("classify: shape mismatch");
  }
  const RowVector<Scalar> pooled = g.colwise().mean();
  const RowVector<Scalar> hidden = gelu((pooled * W3 + b3).eval());
  return hidden * W4 + b4;
}

/// Dropout seed for block `layer` derived from a per-sample seed (splitmix64).
inline std::uint64_t block_seed(std::uint64_t seed, std::size_t layer) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (layer + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Output of block `index` given its input sequence.
template <typename Scalar>
Matrix<Scalar> block_forward(const Matrix<Scalar>& input, const Block<Scalar>& b,
                             const ModelConfig& config, bool training,
                             std::uint64_t seed) {
  const Matrix<Scalar> x_p =
      b.has_projection() ? input_projection(input, b.W1, b.b1) : input;
  const Matrix<Scalar> y =
      s4d_forward(x_p, b.ssm, config.dropout, training, seed);
  Matrix<Scalar> g = glu_mix(y, b.W2, b.b2);
  if (config.normalized) g = layer_norm(g, b.gamma, b.beta);
  return g;
}

/// Full forward pass to class logits. Deterministic in evaluation mode.
template <typename Scalar>
RowVector<Scalar> forward(const Matrix<Scalar>& x, const ModelParams<Scalar>& m,
                          bool training = false, std::uint64_t seed = 0) {
  if (x.rows() < 1) throw ParameterError("forward: empty sequence");
  if (m.blocks.empty() || x.cols() != m.blocks.front().W1.rows()) {
    throw ParameterError("forward: input feature count does not match model");
  }
  Matrix<Scalar> g = x;
  for (std::size_t l = 0; l < m.blocks.size(); ++l) {
    g = block_forward(g, m.blocks[l], m.config, training, block_seed(seed, l));
  }
  return classify(g, m.W3, m.b3, m.W4, m.b4);
}

template <typename Scalar>
int predict(const Matrix<Scalar>& x, const ModelParams<Scalar>& m) {
  Eigen::Index best;
  forward(x, m).maxCoeff(&best);
  return static_cast<int>(best);
}

/// Number of trainable scalars. Complex entries count twice because their
/// real and imaginary parts are stored as separate arrays.
template <typename Scalar>
std::int64_t count_params(const ModelParams<Scalar>& m) {
  std::int64_t total = 0;
  m.visit([&](const std::string&, const auto& arr) { total += arr.size(); });
  return total;
}

// Per-element MAC constants used by count_macs.
inline constexpr std::int64_t kKernelMacsPerMode = 6;  // z^k update + Re(W z^k)
inline constexpr std::int64_t kNormMacsPerElement = 5;
inline constexpr std::int64_t kComplexMulMacs = 4;

/// Analytic multiply-accumulate counts for one forward pass, by stage.
struct MacCount {
  std::int64_t projection = 0;
  std::int64_t kernel = 0;
  std::int64_t fft = 0;
  std::int64_t feedthrough = 0;
  std::int64_t mixing = 0;
  std::int64_t norm = 0;
  std::int64_t head = 0;

  std::int64_t total() const {
    return projection + kernel + fft + feedthrough + mixing + norm + head;
  }
  double mmac() const { return static_cast<double>(total()) / 1e6; }
};

inline std::int64_t fft_macs(std::int64_t padded) {
  std::int64_t log2n = 0;
  while ((std::int64_t{1} << log2n) < padded) ++log2n;
  return 5 * padded * log2n;
}

inline MacCount count_macs(const ModelConfig& c, std::int64_t length,
                           std::int64_t features) {
  const std::int64_t L = length, H = c.hidden, M = c.state / 2;
  const std::int64_t padded =
      static_cast<std::int64_t>(next_pow2(static_cast<std::size_t>(2 * L - 1)));
  MacCount out;
  out.projection = L * features * H;
  for (int l = 0; l < c.layers; ++l) {
    out.kernel += L * H * M * kKernelMacsPerMode;
    out.fft += H * (3 * fft_macs(padded) + padded * kComplexMulMacs);
    out.feedthrough += L * H;
    out.mixing += L * H * 2 * H + L * H;  // expansion + gate product
    if (c.normalized) out.norm += L * H * kNormMacsPerElement;
  }
  out.head = L * H + H * c.head_width() + c.head_width() * c.classes;
  return out;
}

template <typename Scalar>
MacCount count_macs(const ModelParams<Scalar>& m, std::int64_t length,
                    std::int64_t features) {
  return count_macs(m.config, length, features);
}

/// Recurrent, constant-memory evaluation of a whole model. Every stage but
/// the SSM acts per time step, so each block carries only its SSM state; the
/// pooling stage keeps a running sum.
template <typename Scalar>
class ModelStream {
 public:
  explicit ModelStream(const ModelParams<Scalar>& m) : model_(&m) {
    const int H = m.config.hidden;
    for (const auto& b : m.blocks) {
      disc_.push_back(zoh_discretize(b.ssm));
      C_.push_back(b.ssm.C());
      states_.emplace_back(H, b.ssm.modes());
    }
    x_p_.resize(H);
    y_.resize(H);
    y2_.resize(2 * H);
    g_.resize(H);
    sum_ = RowVector<Scalar>::Zero(H);
  }

  template <typename Derived>
  void push(const Eigen::MatrixBase<Derived>& x_k) {
    const auto& m = *model_;
    const Eigen::Index H = m.config.hidden;
    for (std::size_t l = 0; l < m.blocks.size(); ++l) {
      const auto& b = m.blocks[l];
      if (l == 0) {
        x_p_.noalias() = x_k * b.W1;
        x_p_ += b.b1;
      } else {
        x_p_ = g_;
      }
      recurrent_step(states_[l], x_p_, disc_[l], C_[l], b.ssm.D, y_);
      for (Eigen::Index h = 0; h < H; ++h) y_(h) = gelu(y_(h));
      y2_.noalias() = y_ * b.W2;
      y2_ += b.b2;
      for (Eigen::Index h = 0; h < H; ++h) {
        g_(h) = y2_(h) * sigmoid(y2_(H + h));
      }
      if (m.config.normalized) {
        const Scalar mean = g_.mean();
        g_.array() -= mean;
        const Scalar var = g_.array().square().mean();
        g_ *= Scalar(1) / std::sqrt(var + static_cast<Scalar>(kLayerNormEps));
        g_ = g_.cwiseProduct(b.gamma) + b.beta;
      }
    }
    sum_ += g_;
    ++steps_;
  }

  RowVector<Scalar> logits() const {
    if (steps_ == 0) throw ParameterError("stream: no steps pushed");
    const auto& m = *model_;
    const RowVector<Scalar> pooled = sum_ / static_cast<Scalar>(steps_);
    const RowVector<Scalar> hidden = gelu((pooled * m.W3 + m.b3).eval());
    return hidden * m.W4 + m.b4;
  }

  const std::vector<StreamState<Scalar>>& states() const { return states_; }
  std::int64_t steps() const { return steps_; }

 private:
  const ModelParams<Scalar>* model_;
  std::vector<Discretized<Scalar>> disc_;
  std::vector<ComplexMatrix<Scalar>> C_;
  std::vector<StreamState<Scalar>> states_;
  RowVector<Scalar> x_p_, y_, y2_, g_, sum_;
  std::int64_t steps_ = 0;
};

}  // namespace ms4
