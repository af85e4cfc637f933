#include "msmc/losses.hpp"

namespace msmc::ad {

Var triplet_loss_rows(Var p, const IndexMatrix& targets, const MultiHeadCodebook<double>& mcb, double margin,
                      Eigen::Index rows) {
  const Eigen::Index heads = mcb.head_count();
  const Eigen::Index hd = mcb.head_dim();
  if (p.cols() != heads * hd) throw ContractViolation("triplet_loss_rows: prediction width mismatch");
  if (targets.rows() != p.rows() || targets.cols() != heads)
    throw ContractViolation("triplet_loss_rows: target index shape mismatch");
  if (rows < 1 || rows > p.rows()) throw ContractViolation("triplet_loss_rows: bad row count");
  if (!(margin > 0)) throw ContractViolation("triplet_loss_rows: margin must be > 0");

  const Matrix& pv = p.value();
  const double norm = 1.0 / static_cast<double>(rows * heads);
  Matrix dp = Matrix::Zero(p.rows(), p.cols());
  double total = 0.0;
  Eigen::RowVectorXd sub(hd);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index k = 0; k < heads; ++k) {
      const auto& cb = mcb.heads[static_cast<std::size_t>(k)];
      const int target = targets(i, k);
      if (target < 0 || target >= cb.size()) throw ContractViolation("triplet_loss_rows: target out of range");
      sub = pv.row(i).segment(k * hd, hd);
      const Eigen::RowVectorXd to_q = sub - cb.codes.row(target);
      const double dq = to_q.norm();
      const double inv_m = 1.0 / static_cast<double>(cb.size());
      Eigen::RowVectorXd g = Eigen::RowVectorXd::Zero(hd);
      for (Eigen::Index e = 0; e < cb.size(); ++e) {
        if (e == target) continue;
        const Eigen::RowVectorXd to_e = sub - cb.codes.row(e);
        const double de = to_e.norm();
        const double hinge = dq - de + margin;
        if (hinge <= 0.0) continue;
        total += hinge * inv_m;
        // d|x| / dx = x / |x|, taken as 0 at the origin.
        if (dq > 0.0) g += to_q / dq;
        if (de > 0.0) g -= to_e / de;
      }
      dp.row(i).segment(k * hd, hd) = g * (inv_m * norm);
    }
  }
  Matrix out(1, 1);
  out(0, 0) = total * norm;
  Tape& t = *p.tape();
  return t.push(std::move(out), t.requires_grad(p),
                [p, dp = std::move(dp)](Tape& tp, const Matrix& g) { tp.accumulate(p, g(0, 0) * dp); });
}

}  // namespace msmc::ad
