#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "msmc/layers.hpp"
#include "msmc/vq.hpp"

namespace msmc {

/// Structural and loss configuration of the multi-stage VQ autoencoder.
struct AnalyzerConfig {
  int feature_dim = 80;
  std::vector<int> rates{1};  // d_1..d_S, applied cumulatively bottom-up
  int heads = 1;
  int codebook_size = 512;
  int code_dim = 64;  // N
  int model_dim = 64;
  int enc_blocks = 2;
  int dec_blocks = 2;
  nn::BlockFamily block = nn::BlockFamily::Transformer;
  int attention_heads = 2;
  double alpha = 1.0;
  double beta = 0.1;
  double gamma = 1.0;
  double margin = 0.1;
  double ema_decay = 0.99;
  double ema_eps = 1e-5;
  bool pad = true;

  int stages() const { return static_cast<int>(rates.size()); }
  /// prod_{i<=stage} d_i for a 0-based stage.
  int cumulative_rate(int stage) const;
  int total_rate() const { return cumulative_rate(stages() - 1); }
  int head_dim() const { return code_dim / heads; }
  QuantizerLayout layout() const;
  void validate() const;
  /// FNV-1a over the structural fields; used to pair files, checkpoints and codebooks.
  std::uint64_t fingerprint() const;
  bool operator==(const AnalyzerConfig&) const = default;
};

struct PredictorConfig {
  int vocab_size = 16;
  int model_dim = 64;
  int encoder_blocks = 2;
  int decoder_blocks = 2;
  nn::BlockFamily block = nn::BlockFamily::Transformer;
  int attention_heads = 2;
  double gamma = 1.0;
  double margin = 0.1;
  double duration_weight = 0.1;

  void validate() const;
  bool operator==(const PredictorConfig&) const = default;
};

struct MelParams {
  int sample_rate = 16000;
  int n_mels = 80;
  double frame_shift = 0.0125;
  double window_length = 0.05;
  int fft_size = 1024;
  double log_floor = 1e-5;

  int shift_samples() const;
  int window_samples() const;
  void validate() const;
  bool operator==(const MelParams&) const = default;
};

struct TrainConfig {
  long analyzer_iterations = 2000;
  long predictor_iterations = 1000;
  int batch_size = 8;
  double lr_start = 2e-4;
  double lr_end = 1e-6;
  long lr_hold = 200;
  double clip_norm = 1.0;
  std::uint64_t seed = 1234;
  long checkpoint_every = 500;
  long log_every = 10;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct SyntheticCorpusSpec {
  int n_sequences = 8;
  int min_tokens = 6;
  int max_tokens = 10;
  int feature_dim = 80;
  int vocab_size = 16;
  int min_duration = 2;
  int max_duration = 6;
  double noise = 0.02;
  std::uint64_t seed = 7;

  void validate() const;
  bool operator==(const SyntheticCorpusSpec&) const = default;
};

struct DataConfig {
  SyntheticCorpusSpec synthetic;
  std::optional<std::string> directory;  // corpus directory written by gen-corpus
  int eval_sequences = 8;                // held-out items generated with seed+1

  bool operator==(const DataConfig&) const = default;
};

struct ExperimentConfig {
  std::string preset = "V3";
  AnalyzerConfig analyzer;
  PredictorConfig predictor;
  MelParams mel;
  TrainConfig train;
  DataConfig data;

  void validate() const;
  bool operator==(const ExperimentConfig&) const = default;
};

/// Names accepted by --preset.
const std::vector<std::string>& preset_names();
/// V1/V2/V3 representation ablations, M1/M2/M3 predictor block variants, and
/// "reference" (full-scale numbers, not exercised by tests).
ExperimentConfig make_preset(const std::string& name);

std::string to_yaml(const ExperimentConfig& cfg);
/// Missing keys keep preset defaults; unknown keys throw ConfigError.
ExperimentConfig from_yaml(const std::string& text);
ExperimentConfig load_config(const std::string& path);

/// FNV-1a 64-bit.
std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a(const std::string& s);

}  // namespace msmc
