#pragma once

// Orchestration behind the CLI subcommands. Every command is a pure function of
// its config, seed and input files; outputs land under `out_dir`.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "msmc/checkpoint.hpp"
#include "msmc/corpus.hpp"
#include "msmc/metrics.hpp"

namespace msmc {

struct ConfigRequest {
  std::optional<std::string> config_path;
  std::optional<std::string> preset;
  std::optional<std::uint64_t> seed;
};

/// Preset (default V3), then the config file over it, then the seed override.
ExperimentConfig resolve_config(const ConfigRequest& req);

/// Directory corpus when configured, otherwise the synthetic spec.
Corpus training_corpus(const ExperimentConfig& cfg);
/// Held-out synthetic items (same token inventory, seed + 1), or the directory corpus when configured.
Corpus evaluation_corpus(const ExperimentConfig& cfg);

struct TrainSummary {
  long iterations = 0;
  double first_loss = 0.0;
  double last_loss = 0.0;
  double seconds = 0.0;
  std::string checkpoint;
  std::string loss_log;
};

void cmd_gen_corpus(const ExperimentConfig& cfg, const std::string& out_dir, std::ostream& log);

/// Trains from scratch, or continues from `resume` when given.
TrainSummary cmd_train_analyzer(const ExperimentConfig& cfg, const std::string& out_dir, std::ostream& log,
                                const std::optional<std::string>& resume = std::nullopt);

/// Teacher MSMCRs come from the analyzer checkpoint, which also fixes codebooks and structure.
TrainSummary cmd_train_predictor(const ExperimentConfig& cfg, const std::string& analyzer_ckpt, const std::string& out_dir,
                                 std::ostream& log, const std::optional<std::string>& resume = std::nullopt);

/// One MSMCR file per corpus item. Returns the written paths.
std::vector<std::string> cmd_analyze(const std::string& analyzer_ckpt, const std::string& corpus_dir,
                                     const std::string& out_dir, std::ostream& log);

struct SynthesisOutputs {
  std::string msmcr_file;
  std::string features_file;
  std::string wav_file;
};

SynthesisOutputs cmd_synthesize(const std::string& predictor_ckpt, const std::string& analyzer_ckpt,
                                const std::string& text_file, const std::string& out_dir, std::ostream& log,
                                const std::string& decoder = "griffin-lim");

RepresentationReport cmd_report(const std::string& analyzer_ckpt, const std::optional<std::string>& eval_dir,
                                const std::string& out_dir, std::ostream& log);

/// Teacher MSMCRs for a corpus under a trained analyzer.
std::vector<PredictorExample> teacher_examples(const Analyzer& analyzer, const Corpus& corpus);

}  // namespace msmc
