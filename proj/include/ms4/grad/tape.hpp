#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace ms4::grad {

using Mat = Eigen::MatrixXd;

/// Named real arrays; used for parameters and their gradients.
using ParamMap = std::map<std::string, Mat>;

class Tape;

/// Handle to a node on a tape.
struct Var {
  std::size_t id = 0;
};

/// Ordered record of primitive operations. Nodes are appended in execution
/// order, which is a valid topological order, so backward() simply walks the
/// record in reverse. A tape is single-use and not thread-safe.
class Tape {
 public:
  using Adjoint = std::function<void(Tape&, Var self)>;

  /// Trainable leaf. Its gradient is reported under `name`.
  Var leaf(std::string name, Mat value);
  /// Non-trainable input.
  Var constant(Mat value);
  /// Result of a primitive; `adjoint` propagates the adjoint of `self` into
  /// the adjoints of its inputs.
  Var record(Mat value, Adjoint adjoint);

  const Mat& value(Var v) const { return nodes_[v.id].value; }
  /// Adjoint accumulator, lazily sized to the node's value.
  Mat& adjoint(Var v);
  bool has_adjoint(Var v) const { return nodes_[v.id].adjoint.size() > 0; }

  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a 1x1 root. Every leaf appears in the result; leaves
  /// the root does not depend on get zero gradients.
  ParamMap backward(Var root, double root_adjoint = 1.0);

 private:
  struct Node {
    Mat value;
    Mat adjoint;
    Adjoint propagate;
    std::string name;
    bool is_leaf = false;
  };
  std::vector<Node> nodes_;
};

}  // namespace ms4::grad
