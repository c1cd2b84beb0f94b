#include "ms4/grad/tape.hpp"

#include "ms4/errors.hpp"

namespace ms4::grad {

Var Tape::leaf(std::string name, Mat value) {
  nodes_.push_back({std::move(value), Mat(), nullptr, std::move(name), true});
  return {nodes_.size() - 1};
}

Var Tape::constant(Mat value) {
  nodes_.push_back({std::move(value), Mat(), nullptr, {}, false});
  return {nodes_.size() - 1};
}

Var Tape::record(Mat value, Adjoint adjoint) {
  nodes_.push_back({std::move(value), Mat(), std::move(adjoint), {}, false});
  return {nodes_.size() - 1};
}

Mat& Tape::adjoint(Var v) {
  Node& n = nodes_[v.id];
  if (n.adjoint.size() == 0) n.adjoint = Mat::Zero(n.value.rows(), n.value.cols());
  return n.adjoint;
}

ParamMap Tape::backward(Var root, double root_adjoint) {
  if (root.id >= nodes_.size()) throw ContractError("backward: unknown root");
  const Mat& rv = nodes_[root.id].value;
  if (rv.rows() != 1 || rv.cols() != 1) {
    throw ContractError("backward: root must be a scalar (1x1), got " +
                        std::to_string(rv.rows()) + "x" +
                        std::to_string(rv.cols()));
  }
  adjoint(root)(0, 0) += root_adjoint;
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.propagate && n.adjoint.size() > 0) n.propagate(*this, Var{i});
  }
  ParamMap grads;
  for (auto& n : nodes_) {
    if (!n.is_leaf) continue;
    Mat g = n.adjoint.size() > 0 ? n.adjoint
                                 : Mat::Zero(n.value.rows(), n.value.cols());
    auto [it, inserted] = grads.emplace(n.name, g);
    if (!inserted) it->second += g;
  }
  return grads;
}

}  // namespace ms4::grad
