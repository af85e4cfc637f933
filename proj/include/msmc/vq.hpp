#pragma once

// Codebooks, nearest-neighbour quantization, multi-head splitting, EMA codebook
// learning and bit accounting. Everything here is a value-level template on the
// scalar type; the differentiable counterparts live in autodiff.hpp.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "msmc/errors.hpp"

namespace msmc {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using IndexMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar = double>
struct Codebook {
  MatrixX<Scalar> codes;      // M x dim
  VectorX<Scalar> ema_count;  // M
  MatrixX<Scalar> ema_sum;    // M x dim
  Scalar decay = Scalar(0.99);
  Scalar smoothing_eps = Scalar(1e-5);

  Eigen::Index size() const { return codes.rows(); }
  Eigen::Index dim() const { return codes.cols(); }

  void validate() const {
    if (codes.rows() < 2 || codes.cols() < 1) throw ContractViolation("codebook needs M >= 2 and dim >= 1");
    if (ema_count.size() != codes.rows() || ema_sum.rows() != codes.rows() || ema_sum.cols() != codes.cols())
      throw ContractViolation("codebook EMA accumulators do not match code matrix shape");
    if (!codes.allFinite() || !ema_count.allFinite() || !ema_sum.allFinite())
      throw InputError("codebook contains non-finite entries");
    if ((ema_count.array() < Scalar(0)).any()) throw ContractViolation("negative EMA count");
    if (!(decay >= Scalar(0) && decay <= Scalar(1))) throw ConfigError("EMA decay must lie in [0, 1]");
    if (!(smoothing_eps >= Scalar(0))) throw ConfigError("EMA smoothing eps must be non-negative");
  }
};

/// Heads of one stage; head k quantizes columns [k*dim, (k+1)*dim) of a frame.
template <typename Scalar = double>
struct MultiHeadCodebook {
  std::vector<Codebook<Scalar>> heads;

  Eigen::Index head_count() const { return static_cast<Eigen::Index>(heads.size()); }
  Eigen::Index head_dim() const { return heads.empty() ? 0 : heads.front().dim(); }
  Eigen::Index dim() const { return head_count() * head_dim(); }
  Eigen::Index size() const { return heads.empty() ? 0 : heads.front().size(); }

  void validate() const {
    if (heads.empty()) throw ConfigError("multi-head codebook needs at least one head");
    for (const auto& h : heads) {
      h.validate();
      if (h.dim() != head_dim() || h.size() != size())
        throw ConfigError("all heads must share codebook size and head dimension");
    }
  }
};

template <typename Scalar = double>
struct NearestCode {
  Eigen::Index index = 0;
  VectorX<Scalar> code;
  Scalar distance = Scalar(0);
};

template <typename Scalar = double>
struct QuantizationResult {
  IndexMatrix indices;        // L x H
  MatrixX<Scalar> quantized;  // L x N
  MatrixX<Scalar> distances;  // L x H, Euclidean
};

namespace detail {

// Exhaustive search on squared distances, strict '<' so the lowest index wins ties.
template <typename Scalar, typename Query>
Eigen::Index argmin_code(const MatrixX<Scalar>& codes, const Eigen::MatrixBase<Query>& query, Scalar& best_sq) {
  Eigen::Index best = 0;
  best_sq = std::numeric_limits<Scalar>::infinity();
  for (Eigen::Index i = 0; i < codes.rows(); ++i) {
    Scalar d = Scalar(0);
    for (Eigen::Index c = 0; c < codes.cols(); ++c) {
      const Scalar diff = query(c) - codes(i, c);
      d += diff * diff;
    }
    if (d < best_sq) {
      best_sq = d;
      best = i;
    }
  }
  return best;
}

}  // namespace detail

template <typename Scalar, typename Query>
NearestCode<Scalar> nearest_code(const Eigen::MatrixBase<Query>& query, const Codebook<Scalar>& cb) {
  if (query.size() != cb.dim()) throw ContractViolation("query dimension does not match codebook dimension");
  if (!query.allFinite()) throw InputError("non-finite query vector");
  NearestCode<Scalar> out;
  Scalar best_sq;
  out.index = detail::argmin_code(cb.codes, query.derived().reshaped(), best_sq);
  out.code = cb.codes.row(out.index).transpose();
  out.distance = std::sqrt(best_sq);
  return out;
}

/// Split each frame into H contiguous sub-vectors and quantize each against its own head.
template <typename Scalar, typename Derived>
QuantizationResult<Scalar> quantize_mh(const Eigen::MatrixBase<Derived>& h, const MultiHeadCodebook<Scalar>& mcb) {
  const Eigen::Index heads = mcb.head_count();
  if (heads < 1) throw ConfigError("multi-head codebook has no heads");
  if (h.cols() % heads != 0) throw ConfigError("feature width is not divisible by the head count");
  const Eigen::Index hd = h.cols() / heads;
  if (hd != mcb.head_dim()) throw ContractViolation("feature width does not match heads x head_dim");
  if (h.rows() < 1) throw ContractViolation("cannot quantize an empty sequence");
  if (!h.allFinite()) throw InputError("non-finite value in sequence to quantize");

  QuantizationResult<Scalar> r;
  r.indices.resize(h.rows(), heads);
  r.quantized.resize(h.rows(), h.cols());
  r.distances.resize(h.rows(), heads);
  VectorX<Scalar> sub(hd);
  for (Eigen::Index i = 0; i < h.rows(); ++i) {
    for (Eigen::Index k = 0; k < heads; ++k) {
      sub = h.row(i).segment(k * hd, hd).transpose();
      Scalar best_sq;
      const auto& codes = mcb.heads[static_cast<std::size_t>(k)].codes;
      const Eigen::Index idx = detail::argmin_code(codes, sub, best_sq);
      r.indices(i, k) = static_cast<int>(idx);
      r.quantized.row(i).segment(k * hd, hd) = codes.row(idx);
      r.distances(i, k) = std::sqrt(best_sq);
    }
  }
  return r;
}

/// Rebuild quantized vectors from indices (the MSMCR "re-derivable" path).
template <typename Scalar>
MatrixX<Scalar> dequantize_mh(const IndexMatrix& indices, const MultiHeadCodebook<Scalar>& mcb) {
  const Eigen::Index heads = mcb.head_count();
  if (indices.cols() != heads) throw ContractViolation("index matrix head count does not match codebook");
  const Eigen::Index hd = mcb.head_dim();
  MatrixX<Scalar> out(indices.rows(), heads * hd);
  for (Eigen::Index i = 0; i < indices.rows(); ++i) {
    for (Eigen::Index k = 0; k < heads; ++k) {
      const auto& codes = mcb.heads[static_cast<std::size_t>(k)].codes;
      const int idx = indices(i, k);
      if (idx < 0 || idx >= codes.rows()) throw ContractViolation("code index out of range");
      out.row(i).segment(k * hd, hd) = codes.row(idx);
    }
  }
  return out;
}

/// Mean squared error over all elements; `q` is treated as a constant.
template <typename DerivedH, typename DerivedQ>
typename DerivedH::Scalar commitment_loss(const Eigen::MatrixBase<DerivedH>& h, const Eigen::MatrixBase<DerivedQ>& q) {
  if (h.rows() != q.rows() || h.cols() != q.cols()) throw ContractViolation("commitment loss shape mismatch");
  if (h.size() == 0) throw ContractViolation("commitment loss on empty input");
  return (h - q).squaredNorm() / static_cast<typename DerivedH::Scalar>(h.size());
}

/// Per-batch assignment statistics feeding one EMA step.
template <typename Scalar = double>
struct EmaBatch {
  VectorX<Scalar> counts;  // n_i
  MatrixX<Scalar> sums;    // s_i

  EmaBatch() = default;
  EmaBatch(Eigen::Index m, Eigen::Index dim) : counts(VectorX<Scalar>::Zero(m)), sums(MatrixX<Scalar>::Zero(m, dim)) {}

  template <typename Derived>
  void add(Eigen::Index code, const Eigen::MatrixBase<Derived>& vec) {
    if (vec.size() != sums.cols()) throw ContractViolation("assigned vector dimension mismatch");
    if (code < 0 || code >= sums.rows()) throw ContractViolation("assigned code index out of range");
    counts(code) += Scalar(1);
    sums.row(code) += vec.derived().reshaped().transpose();
  }

  EmaBatch& operator+=(const EmaBatch& other) {
    counts += other.counts;
    sums += other.sums;
    return *this;
  }
};

/// Laplace-smoothed cluster size used as the EMA denominator.
template <typename Scalar>
Scalar laplace_smoothed_count(const Codebook<Scalar>& cb, Eigen::Index i) {
  const Scalar total = cb.ema_count.sum();
  const Scalar m = static_cast<Scalar>(cb.size());
  return (cb.ema_count(i) + cb.smoothing_eps) * total / (total + m * cb.smoothing_eps);
}

/// Recompute every code from the accumulators. A code whose smoothed count is
/// zero (only reachable with eps == 0) keeps its previous value.
template <typename Scalar>
void refresh_codes(Codebook<Scalar>& cb) {
  for (Eigen::Index i = 0; i < cb.size(); ++i) {
    const Scalar n = laplace_smoothed_count(cb, i);
    if (n > Scalar(0)) cb.codes.row(i) = cb.ema_sum.row(i) / n;
  }
}

template <typename Scalar>
void ema_update(Codebook<Scalar>& cb, const EmaBatch<Scalar>& batch) {
  if (batch.counts.size() != cb.size() || batch.sums.rows() != cb.size() || batch.sums.cols() != cb.dim())
    throw ContractViolation("EMA batch shape does not match codebook");
  const Scalar keep = cb.decay;
  const Scalar take = Scalar(1) - cb.decay;
  cb.ema_count = keep * cb.ema_count + take * batch.counts;
  cb.ema_sum = keep * cb.ema_sum + take * batch.sums;
  refresh_codes(cb);
}

/// Functional form: `assigned[i]` lists the vectors quantized to code i this batch.
template <typename Scalar>
[[nodiscard]] Codebook<Scalar> ema_updated(Codebook<Scalar> cb, const std::vector<std::vector<VectorX<Scalar>>>& assigned) {
  if (static_cast<Eigen::Index>(assigned.size()) != cb.size())
    throw ContractViolation("assignment list must have one entry per code");
  EmaBatch<Scalar> batch(cb.size(), cb.dim());
  for (std::size_t i = 0; i < assigned.size(); ++i)
    for (const auto& v : assigned[i]) batch.add(static_cast<Eigen::Index>(i), v);
  ema_update(cb, batch);
  return cb;
}

enum class CodebookInit { Uniform };

/// Codes ~ U[-1/M, 1/M], counts 1, sums = codes; codes are then re-derived
/// through the smoothing formula so the EMA invariant holds bit-for-bit.
template <typename Scalar = double>
Codebook<Scalar> codebook_init(Eigen::Index m, Eigen::Index dim, std::uint64_t seed,
                               CodebookInit scheme = CodebookInit::Uniform, Scalar decay = Scalar(0.99),
                               Scalar smoothing_eps = Scalar(1e-5)) {
  if (m < 2) throw ConfigError("codebook size must be at least 2");
  if (dim < 1) throw ConfigError("codebook dimension must be at least 1");
  (void)scheme;
  std::mt19937_64 rng(seed);
  const double bound = 1.0 / static_cast<double>(m);
  std::uniform_real_distribution<double> dist(-bound, bound);
  Codebook<Scalar> cb;
  cb.decay = decay;
  cb.smoothing_eps = smoothing_eps;
  cb.codes.resize(m, dim);
  for (Eigen::Index c = 0; c < dim; ++c)
    for (Eigen::Index i = 0; i < m; ++i) cb.codes(i, c) = static_cast<Scalar>(dist(rng));
  cb.ema_count = VectorX<Scalar>::Ones(m);
  cb.ema_sum = cb.codes;
  refresh_codes(cb);
  return cb;
}

// ---------------------------------------------------------------------------
// Bit accounting

/// Structural description needed for bit accounting: cumulative down-sampling
/// and per-stage, per-head codebook sizes.
struct QuantizerLayout {
  std::vector<int> rates;                        // d_1..d_S
  std::vector<std::vector<int>> codebook_sizes;  // [stage][head]
};

struct CompressionRatio {
  double bits_per_frame = 0.0;
  double exact = 0.0;
  long rounded = 0;
};

/// Bits per source frame B = sum_j sum_k log2(M_jk) / prod_{i<=j} d_i and CR = dim*bits / B.
inline CompressionRatio compression_ratio(const QuantizerLayout& layout, int source_dim, int source_bits_per_scalar) {
  if (source_dim < 1) throw ConfigError("source dimension must be positive");
  if (source_bits_per_scalar < 1) throw ConfigError("source bits per scalar must be positive");
  if (layout.rates.empty() || layout.rates.size() != layout.codebook_sizes.size())
    throw ConfigError("layout needs one rate and one codebook list per stage");
  double cumulative = 1.0;
  double bits = 0.0;
  for (std::size_t j = 0; j < layout.rates.size(); ++j) {
    if (layout.rates[j] < 1) throw ConfigError("down-sampling rates must be >= 1");
    cumulative *= layout.rates[j];
    if (layout.codebook_sizes[j].empty()) throw ConfigError("stage without codebooks");
    double stage_bits = 0.0;
    for (int m : layout.codebook_sizes[j]) {
      if (m < 2) throw ConfigError("codebook sizes must be >= 2");
      stage_bits += std::log2(static_cast<double>(m));
    }
    bits += stage_bits / cumulative;
  }
  CompressionRatio cr;
  cr.bits_per_frame = bits;
  cr.exact = static_cast<double>(source_dim) * source_bits_per_scalar / bits;
  cr.rounded = std::lround(cr.exact);
  return cr;
}

/// Single-codebook ratio N * bits / log2(M), e.g. 2560 / log2(M) for 80-dim float frames.
inline double single_codebook_ratio(int source_dim, int source_bits_per_scalar, int codebook_size) {
  if (codebook_size < 2) throw ConfigError("codebook size must be >= 2");
  return static_cast<double>(source_dim) * source_bits_per_scalar / std::log2(static_cast<double>(codebook_size));
}

/// ceil(log2 M): the serialized width of one index.
inline int index_bits(int codebook_size) {
  if (codebook_size < 2) throw ConfigError("codebook size must be >= 2");
  int bits = 0;
  while ((1LL << bits) < codebook_size) ++bits;
  return bits;
}

}  // namespace msmc
