#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "ms4/errors.hpp"

namespace ms4 {

/// Smallest power of two that is >= n (n >= 1).
inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

/// Iterative radix-2 complex FFT of a fixed power-of-two size.
///
/// Twiddles are evaluated directly (not by recurrence) so the transform stays
/// accurate to a few ulps times log2(n). inverse() includes the 1/n factor.
template <typename Scalar>
class FftPlan {
 public:
  using Complex = std::complex<Scalar>;

  explicit FftPlan(std::size_t n) : n_(n), twiddle_(n / 2), bitrev_(n) {
    if (n == 0 || (n & (n - 1)) != 0) {
      throw ParameterError("FFT size must be a power of two");
    }
    for (std::size_t k = 0; k < n / 2; ++k) {
      const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) /
                           static_cast<double>(n);
      twiddle_[k] = Complex(static_cast<Scalar>(std::cos(angle)),
                            static_cast<Scalar>(std::sin(angle)));
    }
    std::size_t bits = 0;
    while ((std::size_t{1} << bits) < n) ++bits;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t r = 0;
      for (std::size_t b = 0; b < bits; ++b) {
        if (i & (std::size_t{1} << b)) r |= std::size_t{1} << (bits - 1 - b);
      }
      bitrev_[i] = r;
    }
  }

  std::size_t size() const { return n_; }

  void forward(std::span<Complex> data) const { transform(data, false); }

  void inverse(std::span<Complex> data) const {
    transform(data, true);
    const Scalar scale = Scalar(1) / static_cast<Scalar>(n_);
    for (auto& v : data) v *= scale;
  }

 private:
  void transform(std::span<Complex> data, bool conjugate) const {
    if (data.size() != n_) throw ParameterError("FFT buffer size mismatch");
    for (std::size_t i = 0; i < n_; ++i) {
      if (i < bitrev_[i]) std::swap(data[i], data[bitrev_[i]]);
    }
    for (std::size_t len = 2; len <= n_; len <<= 1) {
      const std::size_t half = len / 2;
      const std::size_t stride = n_ / len;
      for (std::size_t start = 0; start < n_; start += len) {
        for (std::size_t j = 0; j < half; ++j) {
          Complex w = twiddle_[j * stride];
          if (conjugate) w = std::conj(w);
          const Complex u = data[start + j];
          const Complex v = data[start + j + half] * w;
          data[start + j] = u + v;
          data[start + j + half] = u - v;
        }
      }
    }
  }

  std::size_t n_;
  std::vector<Complex> twiddle_;
  std::vector<std::size_t> bitrev_;
};

}  // namespace ms4
