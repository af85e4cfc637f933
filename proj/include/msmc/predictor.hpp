#pragma once

// Multi-stage acoustic model: text encoder, length regulator, strided context
// down-sampling, and coarse-to-fine decoders fed with lower-resolution codes.

#include <cstdint>
#include <random>
#include <vector>

#include "msmc/analyzer.hpp"

namespace msmc {

struct TextSequence {
  std::vector<int> tokens;
  std::vector<int> durations;  // frames per token; empty at inference
};

/// Row i of `encoded` repeated durations[i] times.
Var length_regulate(Var encoded, const std::vector<int>& durations);

template <typename Derived>
MatrixX<typename Derived::Scalar> length_regulate(const Eigen::MatrixBase<Derived>& encoded, const std::vector<int>& durations) {
  if (static_cast<Eigen::Index>(durations.size()) != encoded.rows())
    throw ContractViolation("one duration per encoded token is required");
  long total = 0;
  for (int d : durations) {
    if (d < 0) throw InputError("durations must be non-negative");
    total += d;
  }
  if (total == 0) throw InputError("all durations are zero");
  MatrixX<typename Derived::Scalar> out(total, encoded.cols());
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < durations.size(); ++i)
    for (int r = 0; r < durations[i]; ++r) out.row(row++) = encoded.row(static_cast<Eigen::Index>(i));
  return out;
}

/// Inference rounding: half-up, at least one frame per token.
int round_duration(double log_duration);

struct PredictorForward {
  Var encoded;        // T x dm
  Var log_durations;  // T x 1, predicts log(1 + d)
  Var regulated;      // length-regulated, right-padded, L x dm
  int valid_length = 0;
  std::vector<Eigen::Index> stage_valid_rows;
  std::vector<Var> context;    // c_j, stage 1 first
  std::vector<Var> hidden;     // last decoder hidden per stage
  std::vector<Var> predicted;  // p_j
  /// Quantized predictions q-hat_j. Only the inference path feeds them back.
  std::vector<QuantizationResult<double>> feedback;
};

struct PredictorLossReport {
  double mse = 0.0;
  double triplet = 0.0;
  double duration = 0.0;
  double total = 0.0;
};

struct PredictorLoss {
  Var total;
  PredictorLossReport report;
};

class Predictor {
 public:
  /// `codebooks` are the frozen analyzer codebooks; `analyzer_hash` identifies the analyzer checkpoint.
  Predictor(AnalyzerConfig structure, PredictorConfig cfg, Codebooks codebooks, std::uint64_t analyzer_hash,
            std::uint64_t seed);

  const AnalyzerConfig& structure() const { return structure_; }
  const PredictorConfig& config() const { return cfg_; }
  const Codebooks& codebooks() const { return codebooks_; }
  std::uint64_t analyzer_hash() const { return analyzer_hash_; }
  nn::ParameterStore& parameters() { return store_; }
  const nn::ParameterStore& parameters() const { return store_; }

  Var encode_text(Tape& t, const std::vector<int>& tokens) const;
  Var predict_log_durations(Tape& t, Var encoded) const;
  /// Decoders from coarse to fine. With a teacher, feedback is the teacher's
  /// codes; without, it is the quantized prediction of the stage above.
  void predict_stages(Tape& t, PredictorForward& fwd, const Msmcr* teacher) const;

  /// Training pass with ground-truth durations and teacher codes.
  PredictorForward forward_teacher(Tape& t, const TextSequence& text, const Msmcr& teacher) const;
  /// Inference pass; uses `durations` when non-empty, otherwise predicted ones.
  PredictorForward forward_inference(Tape& t, const std::vector<int>& tokens, const std::vector<int>& durations = {}) const;

  std::vector<int> predicted_durations(const std::vector<int>& tokens) const;
  /// Text to MSMCR with predicted durations and quantized feedback everywhere.
  Msmcr synthesize(const std::vector<int>& tokens) const;
  /// As synthesize() but with given durations (frame-aligned with a teacher).
  Msmcr synthesize_aligned(const std::vector<int>& tokens, const std::vector<int>& durations) const;

 private:
  PredictorForward regulate(Tape& t, const std::vector<int>& tokens, const std::vector<int>& durations) const;
  Msmcr package(const PredictorForward& fwd) const;

  AnalyzerConfig structure_;
  PredictorConfig cfg_;
  Codebooks codebooks_;
  std::uint64_t analyzer_hash_;
  nn::ParameterStore store_;
  nn::Parameter* embedding_ = nullptr;
  nn::BlockStack text_enc_;
  std::vector<nn::ConvBlock> dur_blocks_;
  nn::Linear dur_head_;
  std::vector<nn::Conv1d> context_down_;
  std::vector<nn::Linear> dec_in_;
  std::vector<nn::BlockStack> dec_;
  std::vector<nn::Linear> dec_out_;
};

/// (1/S) sum_j mean over valid frames and all N dims of (p - q)^2.
Var predictor_mse_loss(Tape& t, const PredictorForward& fwd, const Msmcr& teacher);
/// (1/S) sum_j mean over valid frames and heads of the triplet loss.
Var predictor_triplet_loss(Tape& t, const PredictorForward& fwd, const Msmcr& teacher, const Codebooks& codebooks,
                           double margin);
/// MSE + gamma * triplet + duration_weight * MSE(log durations, log(1 + d)).
PredictorLoss predictor_loss(Tape& t, const PredictorForward& fwd, const TextSequence& text, const Msmcr& teacher,
                             const Codebooks& codebooks, const PredictorConfig& cfg);

struct PredictorExample {
  TextSequence text;
  Msmcr teacher;
};

class PredictorTrainer {
 public:
  PredictorTrainer(const AnalyzerConfig& structure, const PredictorConfig& cfg, const TrainConfig& train,
                   Codebooks codebooks, std::uint64_t analyzer_hash);

  PredictorLossReport step(const std::vector<const PredictorExample*>& batch);
  std::vector<std::size_t> next_batch(std::size_t corpus_size);

  double learning_rate() const { return schedule_.at(iteration_); }
  Predictor& model() { return model_; }
  const Predictor& model() const { return model_; }
  nn::Adam& optimizer() { return adam_; }
  const nn::Adam& optimizer() const { return adam_; }
  long iteration() const { return iteration_; }
  void set_iteration(long it) { iteration_ = it; }
  std::mt19937_64& rng() { return rng_; }
  const std::mt19937_64& rng() const { return rng_; }
  const TrainConfig& train_config() const { return train_; }
  nn::LearningRateSchedule& schedule() { return schedule_; }

 private:
  TrainConfig train_;
  Predictor model_;
  nn::Adam adam_;
  nn::LearningRateSchedule schedule_;
  long iteration_ = 0;
  std::mt19937_64 rng_;
};

}  // namespace msmc
