#pragma once

// Seeded synthetic text/feature corpus. Each token owns a smooth spectral
// envelope and a fixed duration; frames add a slow per-item harmonic drift,
// a short cross-fade at token boundaries, and low-amplitude noise.

#include <string>
#include <vector>

#include "msmc/config.hpp"
#include "msmc/predictor.hpp"

namespace msmc {

struct CorpusItem {
  TextSequence text;
  Eigen::MatrixXd features;  // sum(durations) x feature_dim
};

struct CorpusStats {
  double min_envelope_gap = 0.0;  // smallest L2 distance between two token envelopes
  double noise_floor = 0.0;       // expected L2 norm of one noise frame
};

struct Corpus {
  SyntheticCorpusSpec spec;
  std::vector<CorpusItem> items;
  CorpusStats stats;
};

/// Envelope of one token, length feature_dim. Depends only on (token, spec.seed, feature_dim).
Eigen::VectorXd token_envelope(int token, const SyntheticCorpusSpec& spec);
/// Frames per occurrence of `token`.
int token_duration(int token, const SyntheticCorpusSpec& spec);

Corpus generate_corpus(const SyntheticCorpusSpec& spec);
/// Same token inventory as `spec`, sentences and noise drawn from `sentence_seed`.
Corpus generate_corpus(const SyntheticCorpusSpec& spec, std::uint64_t sentence_seed);

/// One JSON file per item plus corpus.json with the spec.
void write_corpus(const Corpus& corpus, const std::string& directory);
Corpus read_corpus(const std::string& directory);

/// Tokens from a text file: whitespace-separated integers.
std::vector<int> read_token_file(const std::string& path);

}  // namespace msmc
