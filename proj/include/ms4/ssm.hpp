#pragma once

// Diagonal state-space layer: parameterization, zero-order-hold
// discretization, kernel materialization, FFT causal convolution and the
// equivalent step-wise recurrence.
//
// Shapes follow the time-major convention used throughout the library:
// sequences are L x H (rows = time steps, columns = channels), per-mode
// parameters are H x M with M = N/2 stored complex modes per channel.

#include <cmath>
#include <complex>
#include <concepts>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include <Eigen/Core>

#include "ms4/errors.hpp"
#include "ms4/fft.hpp"

namespace ms4 {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
template <typename Scalar>
using ComplexMatrix = Matrix<std::complex<Scalar>>;

/// Materialized convolution kernel, L x H.
template <typename Scalar>
using Kernel = Matrix<Scalar>;

enum class EigenInit {
  kLinear,   // lambda_n = -1/2 + i*pi*n
  kInverse,  // lambda_n = -1/2 + i*(N/pi)*(N/(2n+1) - 1)
};

/// Trainable parameters of one diagonal SSM layer with H channels and N/2
/// complex modes per channel. Re(lambda) = -exp(a) is negative for every
/// value of `a`, so the discretized system is stable by construction.
template <typename Scalar>
struct SsmParams {
  Matrix<Scalar> a;       // H x M, log of -Re(lambda)
  Matrix<Scalar> b_imag;  // H x M, Im(lambda)
  Matrix<Scalar> B_re, B_im;
  Matrix<Scalar> C_re, C_im;
  RowVector<Scalar> D;          // H
  RowVector<Scalar> log_delta;  // H

  int channels() const { return static_cast<int>(a.rows()); }
  int modes() const { return static_cast<int>(a.cols()); }
  int state_dim() const { return 2 * modes(); }

  ComplexMatrix<Scalar> lambda() const {
    ComplexMatrix<Scalar> out(a.rows(), a.cols());
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      for (Eigen::Index i = 0; i < a.rows(); ++i)
        out(i, j) = {-std::exp(a(i, j)), b_imag(i, j)};
    return out;
  }
  ComplexMatrix<Scalar> B() const { return complex_of(B_re, B_im); }
  ComplexMatrix<Scalar> C() const { return complex_of(C_re, C_im); }

  template <typename Other>
  SsmParams<Other> cast() const {
    return {a.template cast<Other>(),     b_imag.template cast<Other>(),
            B_re.template cast<Other>(),  B_im.template cast<Other>(),
            C_re.template cast<Other>(),  C_im.template cast<Other>(),
            D.template cast<Other>(),     log_delta.template cast<Other>()};
  }

  void check() const {
    const auto h = a.rows(), m = a.cols();
    auto same = [&](const Matrix<Scalar>& x) {
      return x.rows() == h && x.cols() == m;
    };
    if (h < 1 || m < 1 || !same(b_imag) || !same(B_re) || !same(B_im) ||
        !same(C_re) || !same(C_im) || D.size() != h || log_delta.size() != h) {
      throw ParameterError("inconsistent SSM parameter shapes");
    }
  }

 private:
  static ComplexMatrix<Scalar> complex_of(const Matrix<Scalar>& re,
                                          const Matrix<Scalar>& im) {
    ComplexMatrix<Scalar> out(re.rows(), re.cols());
    out.real() = re;
    out.imag() = im;
    return out;
  }
};

/// Fresh S4D parameters. Eigenvalues are shared across channels; C is drawn
/// from a standard normal; B = 1, D = 1; log step size is uniform in
/// [log dt_min, log dt_max] per channel.
template <typename Scalar>
SsmParams<Scalar> init_s4d_params(int channels, int state, double dt_min,
                                  double dt_max, std::uint64_t seed,
                                  EigenInit scheme = EigenInit::kLinear) {
  if (channels < 1) throw ParameterError("channel count must be >= 1");
  if (state < 2 || state % 2 != 0) {
    throw ParameterError("state dimension must be even and >= 2");
  }
  if (!(dt_min > 0.0) || !(dt_min < dt_max)) {
    throw ParameterError("require 0 < dt_min < dt_max");
  }
  const int modes = state / 2;
  SsmParams<Scalar> p;
  p.a.resize(channels, modes);
  p.b_imag.resize(channels, modes);
  for (int n = 0; n < modes; ++n) {
    double im = std::numbers::pi * n;
    if (scheme == EigenInit::kInverse) {
      im = state / std::numbers::pi * (state / (2.0 * n + 1.0) - 1.0);
    }
    p.a.col(n).setConstant(static_cast<Scalar>(std::log(0.5)));
    p.b_imag.col(n).setConstant(static_cast<Scalar>(im));
  }
  p.B_re = Matrix<Scalar>::Ones(channels, modes);
  p.B_im = Matrix<Scalar>::Zero(channels, modes);
  p.D = RowVector<Scalar>::Ones(channels);

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(std::log(dt_min),
                                                 std::log(dt_max));
  p.log_delta.resize(channels);
  for (int h = 0; h < channels; ++h) {
    p.log_delta(h) = static_cast<Scalar>(uniform(rng));
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  p.C_re.resize(channels, modes);
  p.C_im.resize(channels, modes);
  for (int h = 0; h < channels; ++h) {
    for (int n = 0; n < modes; ++n) {
      p.C_re(h, n) = static_cast<Scalar>(normal(rng));
      p.C_im(h, n) = static_cast<Scalar>(normal(rng));
    }
  }
  return p;
}

/// exp(z) - 1 without cancellation for small |z|.
template <typename Scalar>
std::complex<Scalar> expm1(std::complex<Scalar> z) {
  const Scalar half_sin = std::sin(z.imag() / 2);
  return {std::expm1(z.real()) * std::cos(z.imag()) - 2 * half_sin * half_sin,
          std::exp(z.real()) * std::sin(z.imag())};
}

template <typename Scalar>
struct Discretized {
  ComplexMatrix<Scalar> A_bar;  // H x M
  ComplexMatrix<Scalar> B_bar;  // H x M
};

/// Zero-order hold: A_bar = exp(delta*lambda), B_bar = (A_bar - 1)/lambda * B.
template <typename Scalar>
Discretized<Scalar> zoh_discretize(const SsmParams<Scalar>& p) {
  p.check();
  const auto lambda = p.lambda();
  const auto B = p.B();
  Discretized<Scalar> out{ComplexMatrix<Scalar>(lambda.rows(), lambda.cols()),
                          ComplexMatrix<Scalar>(lambda.rows(), lambda.cols())};
  for (Eigen::Index h = 0; h < lambda.rows(); ++h) {
    const Scalar delta = std::exp(p.log_delta(h));
    for (Eigen::Index n = 0; n < lambda.cols(); ++n) {
      const std::complex<Scalar> dl = delta * lambda(h, n);
      out.A_bar(h, n) = std::exp(dl);
      out.B_bar(h, n) = expm1(dl) / lambda(h, n) * B(h, n);
    }
  }
  return out;
}

/// K[k, h] = 2 Re sum_n C[h,n] A_bar[h,n]^k B_bar[h,n], k = 0..L-1.
template <typename Scalar>
Kernel<Scalar> compute_kernel(const SsmParams<Scalar>& p, int length) {
  if (length < 1) throw ParameterError("kernel length must be >= 1");
  const auto disc = zoh_discretize(p);
  const auto C = p.C();
  const Eigen::Index channels = C.rows(), modes = C.cols();
  Kernel<Scalar> K(length, channels);
  std::vector<std::complex<Scalar>> power(modes);
  for (Eigen::Index h = 0; h < channels; ++h) {
    for (Eigen::Index n = 0; n < modes; ++n) {
      power[n] = C(h, n) * disc.B_bar(h, n);
    }
    for (int k = 0; k < length; ++k) {
      Scalar acc = 0;
      for (Eigen::Index n = 0; n < modes; ++n) {
        acc += power[n].real();
        power[n] *= disc.A_bar(h, n);
      }
      K(k, h) = 2 * acc;
    }
  }
  return K;
}

/// Per-channel linear causal convolution y[k] = sum_{j<=k} K[j] x[k-j],
/// evaluated with zero-padded transforms of size next_pow2(2L - 1).
template <typename Scalar>
Matrix<Scalar> fft_causal_conv(const Matrix<Scalar>& x,
                               const Kernel<Scalar>& K) {
  if (x.rows() != K.rows() || x.cols() != K.cols() || x.rows() < 1) {
    throw ParameterError("fft_causal_conv: input and kernel shapes differ");
  }
  const auto length = static_cast<std::size_t>(x.rows());
  const FftPlan<Scalar> plan(next_pow2(2 * length - 1));
  using Complex = std::complex<Scalar>;
  std::vector<Complex> fx(plan.size()), fk(plan.size());
  Matrix<Scalar> y(x.rows(), x.cols());
  for (Eigen::Index h = 0; h < x.cols(); ++h) {
    std::fill(fx.begin(), fx.end(), Complex{});
    std::fill(fk.begin(), fk.end(), Complex{});
    for (std::size_t t = 0; t < length; ++t) {
      fx[t] = x(t, h);
      fk[t] = K(t, h);
    }
    plan.forward(fx);
    plan.forward(fk);
    for (std::size_t i = 0; i < plan.size(); ++i) fx[i] *= fk[i];
    plan.inverse(fx);
    for (std::size_t t = 0; t < length; ++t) y(t, h) = fx[t].real();
  }
  return y;
}

/// Hidden state for recurrent inference. Its size is fixed by (H, N) alone.
template <typename Scalar>
struct StreamState {
  ComplexMatrix<Scalar> h;

  StreamState(int channels, int modes)
      : h(ComplexMatrix<Scalar>::Zero(channels, modes)) {}

  static constexpr std::size_t bytes_for(int channels, int state) {
    return static_cast<std::size_t>(channels) * (state / 2) *
           sizeof(std::complex<Scalar>);
  }
  std::size_t bytes() const {
    return static_cast<std::size_t>(h.size()) * sizeof(std::complex<Scalar>);
  }
};

/// One recurrence step: h <- A_bar h + B_bar x;
/// y = 2 Re(sum_n C h) + D x. Writes y into `out` (length H).
template <typename Scalar, typename In, typename Out>
void recurrent_step(StreamState<Scalar>& state, const Eigen::MatrixBase<In>& x,
                    const Discretized<Scalar>& disc,
                    const ComplexMatrix<Scalar>& C, const RowVector<Scalar>& D,
                    Eigen::MatrixBase<Out> const& out_) {
  auto& out = const_cast<Eigen::MatrixBase<Out>&>(out_);
  const Eigen::Index channels = state.h.rows(), modes = state.h.cols();
  if (x.size() != channels || disc.A_bar.rows() != channels ||
      disc.A_bar.cols() != modes || C.rows() != channels ||
      C.cols() != modes || D.size() != channels || out.size() != channels) {
    throw ParameterError("recurrent_step: shape mismatch");
  }
  for (Eigen::Index h = 0; h < channels; ++h) {
    const Scalar xh = x(h);
    Scalar acc = 0;
    for (Eigen::Index n = 0; n < modes; ++n) {
      auto& s = state.h(h, n);
      s = disc.A_bar(h, n) * s + disc.B_bar(h, n) * xh;
      acc += (C(h, n) * s).real();
    }
    out(h) = 2 * acc + D(h) * xh;
  }
}

template <typename Scalar, typename In>
RowVector<Scalar> recurrent_step(StreamState<Scalar>& state,
                                 const Eigen::MatrixBase<In>& x,
                                 const Discretized<Scalar>& disc,
                                 const ComplexMatrix<Scalar>& C,
                                 const RowVector<Scalar>& D) {
  RowVector<Scalar> y(state.h.rows());
  recurrent_step(state, x, disc, C, D, y);
  return y;
}

/// Exact GELU, x * Phi(x).
template <std::floating_point Scalar>
Scalar gelu(Scalar x) {
  return Scalar(0.5) * x *
         (Scalar(1) + std::erf(x * static_cast<Scalar>(std::numbers::sqrt2 / 2)));
}

template <typename Derived>
auto gelu(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return x.unaryExpr([](Scalar v) { return gelu(v); });
}

/// Inverted dropout in place. Keeps each entry with probability 1 - rate.
template <typename Scalar>
void apply_dropout(Matrix<Scalar>& y, double rate, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ParameterError("dropout rate must be in [0, 1)");
  }
  if (rate == 0.0) return;
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution keep(1.0 - rate);
  const Scalar scale = static_cast<Scalar>(1.0 / (1.0 - rate));
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    y.data()[i] = keep(rng) ? y.data()[i] * scale : Scalar(0);
  }
}

/// S4D block: Dropout(GELU(K * x + D x)). Dropout only in training mode.
template <typename Scalar>
Matrix<Scalar> s4d_forward(const Matrix<Scalar>& x, const SsmParams<Scalar>& p,
                           double dropout_rate, bool training,
                           std::uint64_t seed) {
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ParameterError("dropout rate must be in [0, 1)");
  }
  p.check();
  if (x.cols() != p.channels()) {
    throw ParameterError("s4d_forward: input width != SSM channel count");
  }
  const auto K = compute_kernel(p, static_cast<int>(x.rows()));
  Matrix<Scalar> y = fft_causal_conv(x, K);
  y += x * p.D.asDiagonal();
  y = gelu(y).eval();
  if (training) apply_dropout(y, dropout_rate, seed);
  return y;
}

/// Largest |A_bar| over all channels and modes.
template <typename Scalar>
Scalar max_transition_magnitude(const SsmParams<Scalar>& p) {
  return zoh_discretize(p).A_bar.cwiseAbs().maxCoeff();
}

}  // namespace ms4
