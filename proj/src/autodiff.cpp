#include "msmc/autodiff.hpp"

#include <cmath>

namespace msmc::ad {

const Matrix& Var::value() const {
  if (!tape_) throw ContractViolation("use of an empty Var");
  return tape_->value(*this);
}

double Var::scalar() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) throw ContractViolation("scalar() on a non-1x1 Var");
  return v(0, 0);
}

Var Tape::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Var Tape::variable(Matrix value) { return push(std::move(value), true, nullptr); }

Var Tape::param(const Parameter& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return Var(this, it->second);
  Var v = push(p.value, true, nullptr);
  param_nodes_.emplace(&p, v.id_);
  return v;
}

Var Tape::push(Matrix value, bool requires_grad, Backward backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

void Tape::backward(Var loss) {
  if (loss.tape_ != this) throw ContractViolation("backward() on a Var from another tape");
  const Matrix& lv = value(loss);
  if (lv.rows() != 1 || lv.cols() != 1) throw ContractViolation("backward() needs a 1x1 loss");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  accumulate(loss, Matrix::Ones(1, 1));
  for (std::size_t i = static_cast<std::size_t>(loss.id_) + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.size() == 0 || !n.backward) continue;
    n.backward(*this, n.grad);
  }
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_[static_cast<std::size_t>(v.id_)];
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Matrix Tape::grad(const Parameter& p) const {
  auto it = param_nodes_.find(&p);
  if (it == param_nodes_.end()) return Matrix::Zero(p.value.rows(), p.value.cols());
  return grad(Var(const_cast<Tape*>(this), it->second));
}

namespace {

Tape& same_tape(Var a, Var b) {
  if (!a.valid() || !b.valid() || a.tape() != b.tape()) throw ContractViolation("ops mix Vars from different tapes");
  return *a.tape();
}

void require_same_shape(Var a, Var b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ContractViolation(std::string(op) + ": shape mismatch");
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  if (a.cols() != b.rows()) throw ContractViolation("matmul: inner dimension mismatch");
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.push(a.value() * b.value(), rg, [a, b](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(a)) tp.accumulate(a, g * b.value().transpose());
    if (tp.requires_grad(b)) tp.accumulate(b, a.value().transpose() * g);
  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = same_tape(a, b);
  if (a.cols() != b.cols()) throw ContractViolation("matmul_nt: inner dimension mismatch");
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.push(a.value() * b.value().transpose(), rg, [a, b](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(a)) tp.accumulate(a, g * b.value());
    if (tp.requires_grad(b)) tp.accumulate(b, g.transpose() * a.value());
  });
}

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape(a, b, "add");
  return t.push(a.value() + b.value(), t.requires_grad(a) || t.requires_grad(b), [a, b](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape(a, b, "sub");
  return t.push(a.value() - b.value(), t.requires_grad(a) || t.requires_grad(b), [a, b](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, -g);
  });
}

Var scale(Var a, double s) {
  Tape& t = *a.tape();
  return t.push(s * a.value(), t.requires_grad(a), [a, s](Tape& tp, const Matrix& g) { tp.accumulate(a, s * g); });
}

Var mul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape(a, b, "mul");
  return t.push(a.value().cwiseProduct(b.value()), t.requires_grad(a) || t.requires_grad(b),
                [a, b](Tape& tp, const Matrix& g) {
                  if (tp.requires_grad(a)) tp.accumulate(a, g.cwiseProduct(b.value()));
                  if (tp.requires_grad(b)) tp.accumulate(b, g.cwiseProduct(a.value()));
                });
}

Var add_row(Var a, Var row) {
  Tape& t = same_tape(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) throw ContractViolation("add_row: bias must be 1 x cols");
  Matrix out = a.value().rowwise() + row.value().row(0);
  return t.push(std::move(out), t.requires_grad(a) || t.requires_grad(row), [a, row](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g);
    if (tp.requires_grad(row)) tp.accumulate(row, g.colwise().sum());
  });
}

Var hconcat(Var a, Var b) { return hconcat(std::vector<Var>{a, b}); }

Var hconcat(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractViolation("hconcat of nothing");
  Tape& t = *parts.front().tape();
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  bool rg = false;
  for (const Var& p : parts) {
    same_tape(parts.front(), p);
    if (p.rows() != rows) throw ContractViolation("hconcat: row count mismatch");
    cols += p.cols();
    rg = rg || t.requires_grad(p);
  }
  Matrix out(rows, cols);
  Eigen::Index c = 0;
  for (const Var& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return t.push(std::move(out), rg, [parts](Tape& tp, const Matrix& g) {
    Eigen::Index off = 0;
    for (const Var& p : parts) {
      if (tp.requires_grad(p)) tp.accumulate(p, g.middleCols(off, p.cols()));
      off += p.cols();
    }
  });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  Tape& t = *a.tape();
  if (start < 0 || count < 0 || start + count > a.cols()) throw ContractViolation("slice_cols out of range");
  return t.push(a.value().middleCols(start, count), t.requires_grad(a), [a, start, count](Tape& tp, const Matrix& g) {
    Matrix full = Matrix::Zero(a.rows(), a.cols());
    full.middleCols(start, count) = g;
    tp.accumulate(a, full);
  });
}

Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  Tape& t = *a.tape();
  if (start < 0 || count < 0 || start + count > a.rows()) throw ContractViolation("slice_rows out of range");
  return t.push(a.value().middleRows(start, count), t.requires_grad(a), [a, start, count](Tape& tp, const Matrix& g) {
    Matrix full = Matrix::Zero(a.rows(), a.cols());
    full.middleRows(start, count) = g;
    tp.accumulate(a, full);
  });
}

Var gelu(Var a) {
  Tape& t = *a.tape();
  const Matrix& x = a.value();
  Matrix out = x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v))); });
  return t.push(std::move(out), t.requires_grad(a), [a](Tape& tp, const Matrix& g) {
    Matrix d = a.value().unaryExpr([](double v) {
      const double th = std::tanh(kGeluC * (v + kGeluA * v * v * v));
      return 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
    });
    tp.accumulate(a, g.cwiseProduct(d));
  });
}

Var tanh(Var a) {
  Tape& t = *a.tape();
  Matrix out = a.value().array().tanh().matrix();
  Matrix y = out;
  return t.push(std::move(out), t.requires_grad(a), [a, y = std::move(y)](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g.cwiseProduct((1.0 - y.array().square()).matrix()));
  });
}

Var softmax_rows(Var a) {
  Tape& t = *a.tape();
  const Matrix& x = a.value();
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mx = x.row(i).maxCoeff();
    y.row(i) = (x.row(i).array() - mx).exp().matrix();
    y.row(i) /= y.row(i).sum();
  }
  Matrix ycopy = y;
  return t.push(std::move(y), t.requires_grad(a), [a, y = std::move(ycopy)](Tape& tp, const Matrix& g) {
    const Eigen::VectorXd dots = g.cwiseProduct(y).rowwise().sum();
    Matrix d = y.cwiseProduct(g - dots.replicate(1, g.cols()));
    tp.accumulate(a, d);
  });
}

Var layer_norm(Var a, Var gain, Var bias, double eps) {
  Tape& t = same_tape(a, gain);
  same_tape(a, bias);
  const Eigen::Index c = a.cols();
  if (gain.rows() != 1 || gain.cols() != c || bias.rows() != 1 || bias.cols() != c)
    throw ContractViolation("layer_norm: gain/bias must be 1 x cols");
  const Matrix& x = a.value();
  Matrix xhat(x.rows(), c);
  Eigen::VectorXd inv_std(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (x.row(i).array() - mean) * inv_std(i);
  }
  Matrix out = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
  out.rowwise() += bias.value().row(0);
  const bool rg = t.requires_grad(a) || t.requires_grad(gain) || t.requires_grad(bias);
  return t.push(std::move(out), rg, [a, gain, bias, xhat, inv_std](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(gain)) tp.accumulate(gain, g.cwiseProduct(xhat).colwise().sum());
    if (tp.requires_grad(bias)) tp.accumulate(bias, g.colwise().sum());
    if (tp.requires_grad(a)) {
      Matrix dxhat = (g.array().rowwise() * gain.value().row(0).array()).matrix();
      const double n = static_cast<double>(dxhat.cols());
      Matrix dx(dxhat.rows(), dxhat.cols());
      for (Eigen::Index i = 0; i < dxhat.rows(); ++i) {
        const double m1 = dxhat.row(i).sum() / n;
        const double m2 = dxhat.row(i).dot(xhat.row(i)) / n;
        dx.row(i) = inv_std(i) * (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2);
      }
      tp.accumulate(a, dx);
    }
  });
}

Var gather_rows(Var a, const std::vector<Eigen::Index>& idx) {
  Tape& t = *a.tape();
  Matrix out(static_cast<Eigen::Index>(idx.size()), a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= a.rows()) throw ContractViolation("gather_rows index out of range");
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(idx[i]);
  }
  return t.push(std::move(out), t.requires_grad(a), [a, idx](Tape& tp, const Matrix& g) {
    Matrix d = Matrix::Zero(a.rows(), a.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) d.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
    tp.accumulate(a, d);
  });
}

Var repeat_rows(Var a, int rate) {
  if (rate < 1) throw ContractViolation("repeat_rows: rate must be >= 1");
  std::vector<Eigen::Index> idx;
  idx.reserve(static_cast<std::size_t>(a.rows() * rate));
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (int r = 0; r < rate; ++r) idx.push_back(i);
  return gather_rows(a, idx);
}

Var im2col(Var a, int kernel, int stride, int pad) {
  if (kernel < 1 || stride < 1 || pad < 0) throw ContractViolation("im2col: bad geometry");
  Tape& t = *a.tape();
  const Eigen::Index len = a.rows();
  const Eigen::Index ch = a.cols();
  const Eigen::Index span = len + 2 * pad - kernel;
  if (span < 0) throw ContractViolation("im2col: sequence shorter than kernel");
  const Eigen::Index out_len = span / stride + 1;
  Matrix out = Matrix::Zero(out_len, kernel * ch);
  for (Eigen::Index o = 0; o < out_len; ++o)
    for (int k = 0; k < kernel; ++k) {
      const Eigen::Index src = o * stride + k - pad;
      if (src >= 0 && src < len) out.row(o).segment(k * ch, ch) = a.value().row(src);
    }
  return t.push(std::move(out), t.requires_grad(a), [a, kernel, stride, pad, out_len](Tape& tp, const Matrix& g) {
    const Eigen::Index len = a.rows();
    const Eigen::Index ch = a.cols();
    Matrix d = Matrix::Zero(len, ch);
    for (Eigen::Index o = 0; o < out_len; ++o)
      for (int k = 0; k < kernel; ++k) {
        const Eigen::Index src = o * stride + k - pad;
        if (src >= 0 && src < len) d.row(src) += g.row(o).segment(k * ch, ch);
      }
    tp.accumulate(a, d);
  });
}

Var straight_through(Var h, Var q) {
  Tape& t = same_tape(h, q);
  require_same_shape(h, q, "straight_through");
  return t.push(q.value(), t.requires_grad(h), [h](Tape& tp, const Matrix& g) { tp.accumulate(h, g); });
}

Var stop_gradient(Var a) { return a.tape()->constant(a.value()); }

Var sum(Var a) {
  Tape& t = *a.tape();
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return t.push(std::move(out), t.requires_grad(a), [a](Tape& tp, const Matrix& g) {
    tp.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

Var mse(Var a, Var b, Eigen::Index rows) {
  Tape& t = same_tape(a, b);
  require_same_shape(a, b, "mse");
  if (rows < 1 || rows > a.rows() || a.cols() < 1) throw ContractViolation("mse: bad row count");
  const double n = static_cast<double>(rows * a.cols());
  Matrix out(1, 1);
  out(0, 0) = (a.value().topRows(rows) - b.value().topRows(rows)).squaredNorm() / n;
  return t.push(std::move(out), t.requires_grad(a) || t.requires_grad(b), [a, b, rows, n](Tape& tp, const Matrix& g) {
    Matrix d = Matrix::Zero(a.rows(), a.cols());
    d.topRows(rows) = (2.0 * g(0, 0) / n) * (a.value().topRows(rows) - b.value().topRows(rows));
    if (tp.requires_grad(a)) tp.accumulate(a, d);
    if (tp.requires_grad(b)) tp.accumulate(b, -d);
  });
}

Var operator+(Var a, Var b) { return add(a, b); }
Var operator-(Var a, Var b) { return sub(a, b); }
Var operator*(double s, Var a) { return scale(a, s); }

}  // namespace msmc::ad
