#pragma once

#include <cstdint>
#include <vector>

#include "msmc/vq.hpp"

namespace msmc {

using Codebooks = std::vector<MultiHeadCodebook<double>>;  // one per stage, stage 1 first

struct MsmcrStage {
  IndexMatrix indices;     // L_j x H
  Eigen::MatrixXd vectors;  // L_j x N
};

/// Multi-stage multi-codebook representation. stages[0] is the finest (stage 1).
struct Msmcr {
  std::vector<int> rates;             // d_1..d_S
  std::vector<int> codebook_sizes;    // M per stage
  int heads = 1;
  int valid_length = 0;               // frames before right-padding
  std::uint64_t fingerprint = 0;      // AnalyzerConfig::fingerprint()
  std::vector<MsmcrStage> stages;

  int stage_count() const { return static_cast<int>(stages.size()); }
  Eigen::Index length() const { return stages.empty() ? 0 : stages.front().indices.rows(); }

  /// Length chain, index ranges and shapes. With codebooks, also checks that
  /// vectors are exactly the named entries.
  void validate(const Codebooks* codebooks = nullptr) const;
};

/// Rebuilds every stage's vectors from its indices.
void rematerialize(Msmcr& m, const Codebooks& codebooks);

}  // namespace msmc
