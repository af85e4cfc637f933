#pragma once

// Minimal reverse-mode differentiation over dense matrices. A Tape records every
// op in creation order; backward() replays closures in reverse. Sequences are
// stored frame-major: one row per frame, one column per channel.

#include <Eigen/Dense>

#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "msmc/errors.hpp"
#include "msmc/vq.hpp"

namespace msmc::ad {

using Matrix = Eigen::MatrixXd;

/// Trainable tensor owned by a model. Gradients live on the tape, not here.
struct Parameter {
  std::string name;
  Matrix value;
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; only valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Value that never receives a gradient.
  Var constant(Matrix value);
  /// Tracked leaf; its gradient is readable after backward().
  Var variable(Matrix value);
  /// Leaf bound to a model parameter. Requesting the same parameter twice returns the same node.
  Var param(const Parameter& p);

  Var push(Matrix value, bool requires_grad, Backward backward);

  /// Seeds d(loss)/d(loss) = 1 (loss must be 1x1) and propagates.
  void backward(Var loss);

  const Matrix& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id_)].value; }
  bool requires_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id_)].requires_grad; }
  /// Gradient of the last backward() target w.r.t. v; zeros if nothing flowed.
  Matrix grad(Var v) const;
  /// Gradient w.r.t. a parameter; zeros if the parameter was not used.
  Matrix grad(const Parameter& p) const;

  template <typename Derived>
  void accumulate(Var v, const Eigen::MatrixBase<Derived>& g) {
    auto& node = nodes_[static_cast<std::size_t>(v.id_)];
    if (!node.requires_grad) return;
    if (node.grad.size() == 0)
      node.grad = g;
    else
      node.grad += g;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
  };
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, int> param_nodes_;
};

// ---------------------------------------------------------------------------
// Ops. All inputs must belong to the same tape.

Var matmul(Var a, Var b);
/// a * b^T
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double s);
Var mul(Var a, Var b);
/// Adds a 1 x C row vector to every row of a.
Var add_row(Var a, Var row);
Var hconcat(Var a, Var b);
Var hconcat(const std::vector<Var>& parts);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);
Var gelu(Var a);
Var tanh(Var a);
Var softmax_rows(Var a);
/// Row-wise layer normalisation with 1 x C gain and bias.
Var layer_norm(Var a, Var gain, Var bias, double eps = 1e-5);
/// Output row i is input row idx[i]; gradients scatter-add back.
Var gather_rows(Var a, const std::vector<Eigen::Index>& idx);
/// Each frame repeated `rate` times in order.
Var repeat_rows(Var a, int rate);
/// Zero-padded sliding windows flattened per output frame (tap-major), for strided 1-D convolution.
Var im2col(Var a, int kernel, int stride, int pad);
/// Forward value is q; the gradient passes unchanged to h.
Var straight_through(Var h, Var q);
/// Same value, gradient blocked.
Var stop_gradient(Var a);
Var sum(Var a);
/// Mean of squared differences over the first `rows` rows of a and b.
Var mse(Var a, Var b, Eigen::Index rows);
inline Var mse(Var a, Var b) { return mse(a, b, a.rows()); }

Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(double s, Var a);

}  // namespace msmc::ad
