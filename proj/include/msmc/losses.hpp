#pragma once

#include "msmc/autodiff.hpp"
#include "msmc/vq.hpp"

namespace msmc {

/// Hinge ranking loss of a prediction against its target code:
/// (1/M) * sum_{e != target} max(0, |p - q| - |p - e| + margin).
/// The normaliser is M even though the sum has M - 1 terms.
template <typename Scalar, typename Derived>
Scalar triplet_loss(const Eigen::MatrixBase<Derived>& p, Eigen::Index target, const Codebook<Scalar>& cb, Scalar margin) {
  if (p.size() != cb.dim()) throw ContractViolation("triplet loss: prediction dimension mismatch");
  if (target < 0 || target >= cb.size()) throw ContractViolation("triplet loss: target index out of range");
  if (!(margin > Scalar(0))) throw ContractViolation("triplet loss: margin must be > 0");
  const auto pv = p.derived().reshaped().transpose();
  const Scalar to_target = (pv - cb.codes.row(target)).norm();
  Scalar total = Scalar(0);
  for (Eigen::Index e = 0; e < cb.size(); ++e) {
    if (e == target) continue;
    const Scalar hinge = to_target - (pv - cb.codes.row(e)).norm() + margin;
    if (hinge > Scalar(0)) total += hinge;
  }
  return total / static_cast<Scalar>(cb.size());
}

/// Vector form: `q` must be one of the codebook's entries.
template <typename Scalar, typename DerivedP, typename DerivedQ>
Scalar triplet_loss(const Eigen::MatrixBase<DerivedP>& p, const Eigen::MatrixBase<DerivedQ>& q, const Codebook<Scalar>& cb,
                    Scalar margin) {
  if (q.size() != cb.dim()) throw ContractViolation("triplet loss: target dimension mismatch");
  const auto qv = q.derived().reshaped().transpose();
  for (Eigen::Index i = 0; i < cb.size(); ++i)
    if (cb.codes.row(i) == qv) return triplet_loss(p, i, cb, margin);
  throw ContractViolation("triplet loss: target vector is not a codebook entry");
}

namespace ad {

/// Mean triplet loss over the first `rows` frames and all heads. Codebook
/// entries are constants: no gradient reaches them.
Var triplet_loss_rows(Var p, const IndexMatrix& targets, const MultiHeadCodebook<double>& mcb, double margin,
                      Eigen::Index rows);

}  // namespace ad

}  // namespace msmc
