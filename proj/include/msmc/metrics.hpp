#pragma once

// Completeness and compactness measures for MSMC representations.

#include <map>
#include <string>
#include <vector>

#include "msmc/analyzer.hpp"

namespace msmc {

/// (10 / ln 10) * sqrt(2) * mean over frames of the L2 distance between log-mel rows.
double mel_distortion(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y);

struct CodebookUsage {
  double perplexity = 1.0;
  double dead_fraction = 0.0;
};

CodebookUsage codebook_usage(const std::vector<int>& indices, int codebook_size);

/// Share of positions where two index matrices agree (all stages, all heads).
double index_agreement(const Msmcr& a, const Msmcr& b);

struct StageHeadUsage {
  int stage = 0;  // 1-based
  int head = 0;   // 1-based
  CodebookUsage usage;
};

struct RepresentationReport {
  std::string preset;
  CompressionRatio compression;
  double mel_distortion_db = 0.0;
  int eval_items = 0;
  long eval_frames = 0;
  std::vector<StageHeadUsage> usage;

  /// Aligned human-readable table.
  std::string table() const;
  /// One key=value per line, stable order.
  std::string key_values() const;
};

struct ReportOptions {
  bool bypass_quantization = false;  // q := h, distortion of the plain autoencoder path
};

RepresentationReport representation_report(const std::string& preset, const Analyzer& analyzer,
                                           const std::vector<Eigen::MatrixXd>& eval_set, ReportOptions opts = {});

}  // namespace msmc
