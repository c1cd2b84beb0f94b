#include "ms4/grad/ops.hpp"

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "ms4/errors.hpp"
#include "ms4/model.hpp"
#include "ms4/ssm.hpp"
#include "ms4/train.hpp"

namespace ms4::grad {
namespace {

using Complex = std::complex<double>;

void require_same_shape(const Mat& a, const Mat& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ParameterError(std::string(op) + ": shape mismatch");
  }
}

void require_row(const Mat& a, const Mat& row, const char* op) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw ParameterError(std::string(op) + ": row operand has wrong shape");
  }
}

// out[i] = sum_j w[j] dy[i + j] for i < L, per column: the transpose of the
// causal convolution with w, evaluated as IFFT(conj(FFT(w)) * FFT(dy)).
Mat correlate(const Mat& dy, const Mat& w) {
  const auto length = static_cast<std::size_t>(dy.rows());
  const FftPlan<double> plan(next_pow2(2 * length - 1));
  std::vector<Complex> fd(plan.size()), fw(plan.size());
  Mat out(dy.rows(), dy.cols());
  for (Eigen::Index h = 0; h < dy.cols(); ++h) {
    std::fill(fd.begin(), fd.end(), Complex{});
    std::fill(fw.begin(), fw.end(), Complex{});
    for (std::size_t i = 0; i < length; ++i) {
      fd[i] = dy(i, h);
      fw[i] = w(i, h);
    }
    plan.forward(fd);
    plan.forward(fw);
    for (std::size_t i = 0; i < plan.size(); ++i) fd[i] *= std::conj(fw[i]);
    plan.inverse(fd);
    for (std::size_t i = 0; i < length; ++i) out(i, h) = fd[i].real();
  }
  return out;
}

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf =
      std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

}  // namespace

Var matmul(Tape& t, Var a, Var b) {
  if (t.value(a).cols() != t.value(b).rows()) {
    throw ParameterError("matmul: inner dimensions differ");
  }
  return t.record(t.value(a) * t.value(b), [a, b](Tape& t, Var self) {
    const Mat& d = t.adjoint(self);
    t.adjoint(a).noalias() += d * t.value(b).transpose();
    t.adjoint(b).noalias() += t.value(a).transpose() * d;
  });
}

Var add(Tape& t, Var a, Var b) {
  require_same_shape(t.value(a), t.value(b), "add");
  return t.record(t.value(a) + t.value(b), [a, b](Tape& t, Var self) {
    t.adjoint(a) += t.adjoint(self);
    t.adjoint(b) += t.adjoint(self);
  });
}

Var sub(Tape& t, Var a, Var b) {
  require_same_shape(t.value(a), t.value(b), "sub");
  return t.record(t.value(a) - t.value(b), [a, b](Tape& t, Var self) {
    t.adjoint(a) += t.adjoint(self);
    t.adjoint(b) -= t.adjoint(self);
  });
}

Var hadamard(Tape& t, Var a, Var b) {
  require_same_shape(t.value(a), t.value(b), "hadamard");
  return t.record(t.value(a).cwiseProduct(t.value(b)),
                  [a, b](Tape& t, Var self) {
                    const Mat d = t.adjoint(self);
                    t.adjoint(a) += d.cwiseProduct(t.value(b));
                    t.adjoint(b) += d.cwiseProduct(t.value(a));
                  });
}

Var scale(Tape& t, Var a, double s) {
  return t.record(t.value(a) * s, [a, s](Tape& t, Var self) {
    t.adjoint(a) += s * t.adjoint(self);
  });
}

Var add_row(Tape& t, Var a, Var row) {
  require_row(t.value(a), t.value(row), "add_row");
  Mat out = t.value(a).rowwise() + t.value(row).row(0);
  return t.record(std::move(out), [a, row](Tape& t, Var self) {
    const Mat& d = t.adjoint(self);
    t.adjoint(a) += d;
    t.adjoint(row) += d.colwise().sum();
  });
}

Var mul_row(Tape& t, Var a, Var row) {
  require_row(t.value(a), t.value(row), "mul_row");
  Mat out = t.value(a) * t.value(row).row(0).asDiagonal();
  return t.record(std::move(out), [a, row](Tape& t, Var self) {
    const Mat d = t.adjoint(self);
    t.adjoint(a) += d * t.value(row).row(0).asDiagonal();
    t.adjoint(row) += d.cwiseProduct(t.value(a)).colwise().sum();
  });
}

Var gelu(Tape& t, Var a) {
  Mat out = ms4::gelu(t.value(a));
  return t.record(std::move(out), [a](Tape& t, Var self) {
    t.adjoint(a) += t.adjoint(self).cwiseProduct(
        t.value(a).unaryExpr([](double v) { return gelu_grad(v); }));
  });
}

Var sigmoid(Tape& t, Var a) {
  Mat out = t.value(a).unaryExpr([](double v) { return ms4::sigmoid(v); });
  return t.record(std::move(out), [a](Tape& t, Var self) {
    const Mat& s = t.value(self);
    const Mat local = s.cwiseProduct((1.0 - s.array()).matrix());
    t.adjoint(a) += t.adjoint(self).cwiseProduct(local);
  });
}

Var exp(Tape& t, Var a) {
  Mat out = t.value(a).array().exp().matrix();
  return t.record(std::move(out), [a](Tape& t, Var self) {
    t.adjoint(a) += t.adjoint(self).cwiseProduct(t.value(self));
  });
}

Var sum(Tape& t, Var a) {
  Mat out(1, 1);
  out(0, 0) = t.value(a).sum();
  return t.record(std::move(out), [a](Tape& t, Var self) {
    t.adjoint(a).array() += t.adjoint(self)(0, 0);
  });
}

Var mean_rows(Tape& t, Var a) {
  if (t.value(a).rows() == 0) throw ParameterError("mean_rows: empty input");
  Mat out = t.value(a).colwise().mean();
  return t.record(std::move(out), [a](Tape& t, Var self) {
    const double inv = 1.0 / static_cast<double>(t.value(a).rows());
    t.adjoint(a).rowwise() += t.adjoint(self).row(0) * inv;
  });
}

Var cols(Tape& t, Var a, int start, int count) {
  if (start < 0 || count < 0 || start + count > t.value(a).cols()) {
    throw ParameterError("cols: column range out of bounds");
  }
  Mat out = t.value(a).middleCols(start, count);
  return t.record(std::move(out), [a, start, count](Tape& t, Var self) {
    t.adjoint(a).middleCols(start, count) += t.adjoint(self);
  });
}

Var standardize_rows(Tape& t, Var a) {
  Mat out = ms4::standardize_rows<double>(t.value(a));
  return t.record(std::move(out), [a](Tape& t, Var self) {
    const Mat& x = t.value(a);
    const Mat& xhat = t.value(self);
    const Mat& d = t.adjoint(self);
    Mat& da = t.adjoint(a);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const double mean = x.row(r).mean();
      const double var = (x.row(r).array() - mean).square().mean();
      const double inv_sigma = 1.0 / std::sqrt(var + kLayerNormEps);
      const double mean_d = d.row(r).mean();
      const double mean_dx = d.row(r).cwiseProduct(xhat.row(r)).mean();
      da.row(r).array() +=
          inv_sigma *
          (d.row(r).array() - mean_d - xhat.row(r).array() * mean_dx);
    }
  });
}

Var causal_conv(Tape& t, Var x, Var K) {
  Mat out = fft_causal_conv<double>(t.value(x), t.value(K));
  return t.record(std::move(out), [x, K](Tape& t, Var self) {
    const Mat d = t.adjoint(self);
    t.adjoint(x) += correlate(d, t.value(K));
    t.adjoint(K) += correlate(d, t.value(x));
  });
}

Var ssm_kernel(Tape& t, const SsmVars& v, int length) {
  SsmParams<double> p{t.value(v.a),    t.value(v.b_imag), t.value(v.B_re),
                      t.value(v.B_im), t.value(v.C_re),   t.value(v.C_im),
                      RowVector<double>::Zero(t.value(v.a).rows()),
                      t.value(v.log_delta)};
  Mat K = compute_kernel(p, length);
  return t.record(std::move(K), [v, length](Tape& t, Var self) {
    const Mat dK = t.adjoint(self);
    const Mat& a = t.value(v.a);
    const Mat& b_imag = t.value(v.b_imag);
    const Mat& B_re = t.value(v.B_re);
    const Mat& B_im = t.value(v.B_im);
    const Mat& C_re = t.value(v.C_re);
    const Mat& C_im = t.value(v.C_im);
    const Mat& log_delta = t.value(v.log_delta);
    Mat& ga = t.adjoint(v.a);
    Mat& gb = t.adjoint(v.b_imag);
    Mat& gBr = t.adjoint(v.B_re);
    Mat& gBi = t.adjoint(v.B_im);
    Mat& gCr = t.adjoint(v.C_re);
    Mat& gCi = t.adjoint(v.C_im);
    Mat& gld = t.adjoint(v.log_delta);

    // For a real loss and complex intermediate u, g_u = dL/dRe(u) +
    // i dL/dIm(u). A holomorphic map u = f(w) gives g_w = conj(f'(w)) g_u,
    // and a real input s gives dL/ds = Re(conj(g_u) du/ds).
    for (Eigen::Index h = 0; h < a.rows(); ++h) {
      const double delta = std::exp(log_delta(0, h));
      double g_delta = 0.0;
      for (Eigen::Index n = 0; n < a.cols(); ++n) {
        const Complex lambda(-std::exp(a(h, n)), b_imag(h, n));
        const Complex B(B_re(h, n), B_im(h, n));
        const Complex C(C_re(h, n), C_im(h, n));
        const Complex z = std::exp(delta * lambda);
        const Complex em1 = ms4::expm1(delta * lambda);
        const Complex B_bar = em1 / lambda * B;
        const Complex W = C * B_bar;

        // S0 = sum_k dK_k conj(z)^k, S1 = sum_k k dK_k conj(z)^(k-1).
        Complex s0, s1, pw(1.0, 0.0), prev;
        const Complex zc = std::conj(z);
        for (int k = 0; k < length; ++k) {
          const double d = dK(k, h);
          s0 += d * pw;
          if (k > 0) s1 += (static_cast<double>(k) * d) * prev;
          prev = pw;
          pw *= zc;
        }
        const Complex gW = 2.0 * s0;
        const Complex gz = 2.0 * std::conj(W) * s1;
        const Complex gC = std::conj(B_bar) * gW;
        const Complex gBbar = std::conj(C) * gW;
        const Complex gB = std::conj(em1 / lambda) * gBbar;
        const Complex dBbar_dlambda =
            B * (delta * z * lambda - em1) / (lambda * lambda);
        const Complex glambda =
            std::conj(delta * z) * gz + std::conj(dBbar_dlambda) * gBbar;

        ga(h, n) += -std::exp(a(h, n)) * glambda.real();
        gb(h, n) += glambda.imag();
        gBr(h, n) += gB.real();
        gBi(h, n) += gB.imag();
        gCr(h, n) += gC.real();
        gCi(h, n) += gC.imag();
        g_delta += (std::conj(gz) * lambda * z).real() +
                   (std::conj(gBbar) * z * B).real();
      }
      gld(0, h) += delta * g_delta;
    }
  });
}

Var cross_entropy(Tape& t, Var logits, int label) {
  const Mat& z = t.value(logits);
  if (z.rows() != 1) throw ParameterError("cross_entropy: logits must be a row");
  Mat out(1, 1);
  out(0, 0) = ms4::cross_entropy(RowVector<double>(z.row(0)), label);
  return t.record(std::move(out), [logits, label](Tape& t, Var self) {
    const double d = t.adjoint(self)(0, 0);
    t.adjoint(logits).row(0) +=
        d * cross_entropy_grad(RowVector<double>(t.value(logits).row(0)), label);
  });
}

}  // namespace ms4::grad
