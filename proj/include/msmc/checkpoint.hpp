#pragma once

// Training checkpoints: config, parameters, optimizer moments, iteration, RNG
// state and codebooks, stored as CBOR so every double round-trips exactly.

#include <cstdint>
#include <memory>
#include <string>

#include "msmc/config.hpp"
#include "msmc/predictor.hpp"

namespace msmc {

inline constexpr int kCheckpointVersion = 1;

/// Content hash of a trained analyzer: structure fingerprint, parameters and codebooks.
std::uint64_t analyzer_hash(const Analyzer& a);

struct AnalyzerCheckpoint {
  ExperimentConfig config;
  std::unique_ptr<AnalyzerTrainer> trainer;
};

struct PredictorCheckpoint {
  ExperimentConfig config;
  std::unique_ptr<PredictorTrainer> trainer;
};

void save_analyzer_checkpoint(const std::string& path, const ExperimentConfig& cfg, const AnalyzerTrainer& trainer);
AnalyzerCheckpoint load_analyzer_checkpoint(const std::string& path);

void save_predictor_checkpoint(const std::string& path, const ExperimentConfig& cfg, const PredictorTrainer& trainer);
PredictorCheckpoint load_predictor_checkpoint(const std::string& path);

}  // namespace msmc
