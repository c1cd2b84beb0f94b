#pragma once

#include <cstdint>

#include "ms4/grad/finite_diff.hpp"
#include "ms4/grad/ops.hpp"
#include "ms4/grad/tape.hpp"
#include "ms4/model.hpp"

namespace ms4::grad {

/// Copies every trainable array of the model into a ParamMap keyed by the
/// names ModelParams::visit reports.
ParamMap to_param_map(const ModelParams<double>& model);
/// Inverse of to_param_map. Throws ParameterError on a missing name or a
/// shape mismatch.
void assign_params(ModelParams<double>& model, const ParamMap& params);

/// Records the full forward pass on `tape`, registering each trainable array
/// as a leaf. Uses the same dropout masks as ms4::forward for a given seed.
Var record_logits(Tape& tape, const ModelParams<double>& model, const Mat& x,
                  bool training, std::uint64_t seed);

struct LossAndGrad {
  double loss = 0.0;
  RowVector<double> logits;
  ParamMap grads;
};

/// Cross-entropy of one sample and its gradient w.r.t. every parameter.
LossAndGrad loss_and_grad(const ModelParams<double>& model, const Mat& x,
                          int label, bool training, std::uint64_t seed,
                          double loss_adjoint = 1.0);

/// Evaluation-mode cross-entropy gradient of one sample checked against
/// central differences over every parameter array. The differenced loss is
/// evaluated in long double; the analytic gradient stays in double.
GradCheckReport model_gradient_check(const ModelParams<double>& model,
                                     const Mat& x, int label, double epsilon);

}  // namespace ms4::grad
