#pragma once

// Multi-stage VQ autoencoder: stage-wise strided encoders, top-down
// quantization with residual and prediction modules, and a decoder.

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "msmc/config.hpp"
#include "msmc/msmcr.hpp"
#include "msmc/optim.hpp"

namespace msmc {

using ad::Matrix;
using ad::Tape;
using ad::Var;

struct PaddedSequence {
  Matrix frames;
  int valid_length = 0;
};

/// Right-pads with copies of the last frame up to the next multiple of `multiple`.
PaddedSequence pad_to_multiple(const Matrix& x, int multiple, bool allow_padding);

/// Each frame repeated `rate` times, order preserved.
template <typename Derived>
MatrixX<typename Derived::Scalar> upsample_repeat(const Eigen::MatrixBase<Derived>& seq, int rate) {
  if (rate < 1) throw ContractViolation("upsample rate must be >= 1");
  MatrixX<typename Derived::Scalar> out(seq.rows() * rate, seq.cols());
  for (Eigen::Index i = 0; i < seq.rows(); ++i)
    for (int r = 0; r < rate; ++r) out.row(i * rate + r) = seq.row(i);
  return out;
}

/// Frames still covering real input at a stage with cumulative rate `rate`.
inline Eigen::Index valid_rows(int valid_length, int rate) { return (valid_length + rate - 1) / rate; }

/// Quantization decisions captured from one forward pass. Replaying them turns
/// each quantizer into h + const, which makes the loss smooth in the parameters
/// for finite-difference checks of the straight-through gradient.
struct FrozenQuantization {
  std::vector<IndexMatrix> indices;
  std::vector<Matrix> offsets;  // q - h at capture time
};

struct ForwardOptions {
  bool bypass_quantization = false;  // q := h, a plain autoencoder
  const FrozenQuantization* frozen = nullptr;
};

struct AnalyzerForward {
  Matrix input;  // padded
  int valid_length = 0;
  std::vector<Eigen::Index> stage_valid_rows;
  std::vector<Var> encoded;    // E_j outputs, stage 1 first
  std::vector<Var> hidden;     // h_j: projection right before quantization
  std::vector<QuantizationResult<double>> quant;
  std::vector<Var> quantized;  // straight-through q_j
  std::vector<Var> residual;   // R_j outputs
  std::vector<Var> predicted;  // p_j for j < S, stage 1 first (size S-1)
  Var reconstruction;          // padded length x feature_dim

  FrozenQuantization freeze() const;
};

struct AnalyzerLossReport {
  double recon_mse = 0.0;
  std::vector<double> commit_per_stage;
  std::vector<double> predict_per_stage;  // each MSE + gamma * triplet
  double total = 0.0;
};

struct AnalyzerLoss {
  Var total;
  AnalyzerLossReport report;
};

class Analyzer {
 public:
  Analyzer(AnalyzerConfig cfg, std::uint64_t seed);

  const AnalyzerConfig& config() const { return cfg_; }
  nn::ParameterStore& parameters() { return store_; }
  const nn::ParameterStore& parameters() const { return store_; }
  Codebooks& codebooks() { return codebooks_; }
  const Codebooks& codebooks() const { return codebooks_; }

  PaddedSequence prepare(const Matrix& x) const;
  std::vector<Var> encode_stages(Tape& t, Var x) const;
  /// Fills hidden/quant/quantized/residual/predicted of `fwd` from encoder outputs.
  void quantize_top_down(Tape& t, AnalyzerForward& fwd, const ForwardOptions& opts) const;
  /// Decoder D on the stage-1 fused sequence.
  Var decode(Tape& t, Var fused) const;

  AnalyzerForward forward(Tape& t, const Matrix& x, const ForwardOptions& opts = {}) const;

  Msmcr analyze(const Matrix& x) const;
  /// Runs the residual path and decoder from quantized vectors alone; returns valid_length frames.
  Matrix reconstruct(const Msmcr& m) const;

 private:
  Var residual_step(Tape& t, int stage, Var q, const Var* upsampled) const;

  AnalyzerConfig cfg_;
  nn::ParameterStore store_;
  Codebooks codebooks_;
  nn::Linear in_proj_;
  std::vector<nn::Conv1d> down_;
  std::vector<nn::BlockStack> enc_;
  std::vector<nn::Linear> pre_quant_;
  std::vector<nn::Linear> fuse_;  // stage S: N -> dm; j < S: dm + N -> dm
  std::vector<nn::BlockStack> res_;
  std::vector<nn::Linear> predict_;  // j < S
  nn::BlockStack dec_;
  nn::Linear out_proj_;
};

/// Total: recon + alpha/S * sum commit + beta/(S-1) * sum (MSE + gamma * TPL).
AnalyzerLoss analyzer_loss(Tape& t, const AnalyzerForward& fwd, const AnalyzerConfig& cfg, const Codebooks& codebooks);

/// Model + optimizer + EMA codebooks + iteration counter + RNG: everything a resume needs.
class AnalyzerTrainer {
 public:
  AnalyzerTrainer(const AnalyzerConfig& cfg, const TrainConfig& train);

  /// One Adam step on the mean loss over `batch`, then one EMA update per codebook.
  AnalyzerLossReport step(const std::vector<Matrix>& batch);
  /// Indices of the next batch drawn from a corpus of `corpus_size` items.
  std::vector<std::size_t> next_batch(std::size_t corpus_size);

  double learning_rate() const { return schedule_.at(iteration_); }
  Analyzer& model() { return model_; }
  const Analyzer& model() const { return model_; }
  nn::Adam& optimizer() { return adam_; }
  const nn::Adam& optimizer() const { return adam_; }
  long iteration() const { return iteration_; }
  void set_iteration(long it) { iteration_ = it; }
  std::mt19937_64& rng() { return rng_; }
  const std::mt19937_64& rng() const { return rng_; }
  const TrainConfig& train_config() const { return train_; }
  ForwardOptions& forward_options() { return options_; }
  nn::LearningRateSchedule& schedule() { return schedule_; }

 private:
  TrainConfig train_;
  Analyzer model_;
  nn::Adam adam_;
  nn::LearningRateSchedule schedule_;
  long iteration_ = 0;
  std::mt19937_64 rng_;
  ForwardOptions options_;
};

}  // namespace msmc
