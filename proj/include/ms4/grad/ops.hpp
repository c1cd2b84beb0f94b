#pragma once

// Differentiable primitives recorded on a Tape. Each one computes its value
// eagerly and registers an adjoint closure.

#include "ms4/grad/tape.hpp"

namespace ms4::grad {

Var matmul(Tape& t, Var a, Var b);
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var hadamard(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double s);
/// a + row, broadcasting a 1 x n row over every row of a.
Var add_row(Tape& t, Var a, Var row);
/// a * row elementwise, broadcasting a 1 x n row over every row of a.
Var mul_row(Tape& t, Var a, Var row);

Var gelu(Tape& t, Var a);
Var sigmoid(Tape& t, Var a);
Var exp(Tape& t, Var a);

/// Sum of all entries, 1 x 1.
Var sum(Tape& t, Var a);
/// Column means (mean over rows), 1 x cols.
Var mean_rows(Tape& t, Var a);
/// Column block [start, start + count).
Var cols(Tape& t, Var a, int start, int count);
/// Per-row centering and scaling to unit population variance (eps 1e-5).
Var standardize_rows(Tape& t, Var a);

/// Per-column causal convolution of x (L x H) with kernel K (L x H) through
/// padded FFTs. The adjoint applies the conjugate-transposed transform.
Var causal_conv(Tape& t, Var x, Var K);

/// Leaves of one diagonal SSM parameter bundle.
struct SsmVars {
  Var a, b_imag, B_re, B_im, C_re, C_im, log_delta;
};

/// Materialized ZOH kernel (length x H). Differentiated analytically through
/// the exponential, the (A_bar - 1)/lambda * B expression and the powers.
Var ssm_kernel(Tape& t, const SsmVars& p, int length);

/// Softmax cross-entropy of a 1 x n_c logit row against `label`, 1 x 1.
Var cross_entropy(Tape& t, Var logits, int label);

}  // namespace ms4::grad
