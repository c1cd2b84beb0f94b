#include "ms4/grad/model_grad.hpp"

#include "ms4/errors.hpp"
#include "ms4/train.hpp"

namespace ms4::grad {

ParamMap to_param_map(const ModelParams<double>& model) {
  ParamMap out;
  model.visit([&](const std::string& name, const auto& arr) {
    out.emplace(name, Mat(arr));
  });
  return out;
}

void assign_params(ModelParams<double>& model, const ParamMap& params) {
  model.visit([&](const std::string& name, auto& arr) {
    const auto it = params.find(name);
    if (it == params.end()) throw ParameterError("missing parameter " + name);
    if (it->second.rows() != arr.rows() || it->second.cols() != arr.cols()) {
      throw ParameterError("shape mismatch for parameter " + name);
    }
    arr = it->second;
  });
}

Var record_logits(Tape& tape, const ModelParams<double>& model, const Mat& x,
                  bool training, std::uint64_t seed) {
  const ModelConfig& cfg = model.config;
  if (x.rows() < 1) throw ParameterError("forward: empty sequence");
  if (model.blocks.empty() || x.cols() != model.blocks.front().W1.rows()) {
    throw ParameterError("forward: input feature count does not match model");
  }
  std::map<std::string, Var> leaves;
  model.visit([&](const std::string& name, const auto& arr) {
    leaves.emplace(name, tape.leaf(name, Mat(arr)));
  });
  const int H = cfg.hidden;
  const int length = static_cast<int>(x.rows());

  Var g = tape.constant(x);
  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    const std::string p = "block" + std::to_string(l) + ".";
    auto leaf = [&](const std::string& name) { return leaves.at(p + name); };
    Var x_p = g;
    if (model.blocks[l].has_projection()) {
      x_p = add_row(tape, matmul(tape, g, leaf("W1")), leaf("b1"));
    }
    const SsmVars ssm{leaf("ssm.a"),    leaf("ssm.b_imag"), leaf("ssm.B_re"),
                      leaf("ssm.B_im"), leaf("ssm.C_re"),   leaf("ssm.C_im"),
                      leaf("ssm.log_delta")};
    const Var K = ssm_kernel(tape, ssm, length);
    Var y = add(tape, causal_conv(tape, x_p, K), mul_row(tape, x_p, leaf("ssm.D")));
    y = gelu(tape, y);
    if (training && cfg.dropout > 0.0) {
      Matrix<double> mask = Matrix<double>::Ones(length, H);
      apply_dropout(mask, cfg.dropout, block_seed(seed, l));
      y = hadamard(tape, y, tape.constant(std::move(mask)));
    }
    const Var y2 = add_row(tape, matmul(tape, y, leaf("W2")), leaf("b2"));
    g = hadamard(tape, cols(tape, y2, 0, H), sigmoid(tape, cols(tape, y2, H, H)));
    if (cfg.normalized) {
      g = add_row(tape, mul_row(tape, standardize_rows(tape, g), leaf("gamma")),
                  leaf("beta"));
    }
  }
  const Var pooled = mean_rows(tape, g);
  const Var hidden =
      gelu(tape, add_row(tape, matmul(tape, pooled, leaves.at("head.W3")),
                         leaves.at("head.b3")));
  return add_row(tape, matmul(tape, hidden, leaves.at("head.W4")),
                 leaves.at("head.b4"));
}

LossAndGrad loss_and_grad(const ModelParams<double>& model, const Mat& x,
                          int label, bool training, std::uint64_t seed,
                          double loss_adjoint) {
  Tape tape;
  const Var logits = record_logits(tape, model, x, training, seed);
  const Var loss = cross_entropy(tape, logits, label);
  LossAndGrad out;
  out.loss = tape.value(loss)(0, 0);
  out.logits = tape.value(logits).row(0);
  out.grads = tape.backward(loss, loss_adjoint);
  return out;
}

GradCheckReport model_gradient_check(const ModelParams<double>& model,
                                     const Mat& x, int label, double epsilon) {
  ModelParams<double> probe = model;
  const Matrix<long double> x_ext = x.cast<long double>();
  const LossFn loss = [&](const ParamMap& p) {
    assign_params(probe, p);
    return ms4::cross_entropy(forward(x_ext, probe.cast<long double>()), label);
  };
  const GradFn grad = [&](const ParamMap& p) {
    assign_params(probe, p);
    return loss_and_grad(probe, x, label, false, 0).grads;
  };
  return finite_diff_check(loss, grad, to_param_map(model), epsilon);
}

}  // namespace ms4::grad
