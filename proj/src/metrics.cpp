#include "msmc/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <numbers>
#include <sstream>

namespace msmc {

double mel_distortion(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  if (x.rows() != y.rows() || x.cols() != y.cols()) throw ContractViolation("mel_distortion: shape mismatch");
  if (x.rows() == 0) throw ContractViolation("mel_distortion: no frames");
  const double scale = 10.0 / std::numbers::ln10 * std::numbers::sqrt2;
  return scale * (x - y).rowwise().norm().mean();
}

CodebookUsage codebook_usage(const std::vector<int>& indices, int codebook_size) {
  if (indices.empty()) throw InputError("codebook_usage: empty index stream");
  if (codebook_size < 1) throw ContractViolation("codebook_usage: codebook size must be positive");
  std::vector<long> counts(static_cast<std::size_t>(codebook_size), 0);
  for (int i : indices) {
    if (i < 0 || i >= codebook_size) throw ContractViolation("codebook_usage: index out of range");
    ++counts[static_cast<std::size_t>(i)];
  }
  const double n = static_cast<double>(indices.size());
  double entropy = 0.0;
  long dead = 0;
  for (long c : counts) {
    if (c == 0) {
      ++dead;
      continue;
    }
    const double p = static_cast<double>(c) / n;
    entropy -= p * std::log(p);
  }
  return {std::exp(entropy), static_cast<double>(dead) / codebook_size};
}

double index_agreement(const Msmcr& a, const Msmcr& b) {
  if (a.stages.size() != b.stages.size()) throw ContractViolation("index_agreement: stage count mismatch");
  long same = 0;
  long total = 0;
  for (std::size_t j = 0; j < a.stages.size(); ++j) {
    const auto& x = a.stages[j].indices;
    const auto& y = b.stages[j].indices;
    if (x.cols() != y.cols()) throw ContractViolation("index_agreement: head count mismatch");
    const Eigen::Index rows = std::min(x.rows(), y.rows());
    if (rows == 0) continue;
    same += (x.topRows(rows).array() == y.topRows(rows).array()).count();
    total += rows * x.cols();
  }
  if (total == 0) throw ContractViolation("index_agreement: nothing to compare");
  return static_cast<double>(same) / static_cast<double>(total);
}

RepresentationReport representation_report(const std::string& preset, const Analyzer& analyzer,
                                           const std::vector<Eigen::MatrixXd>& eval_set, ReportOptions opts) {
  if (eval_set.empty()) throw InputError("representation report needs at least one evaluation item");
  const AnalyzerConfig& cfg = analyzer.config();
  RepresentationReport r;
  r.preset = preset;
  r.compression = compression_ratio(cfg.layout(), cfg.feature_dim, 32);
  r.eval_items = static_cast<int>(eval_set.size());

  std::vector<std::vector<std::vector<int>>> streams(static_cast<std::size_t>(cfg.stages()),
                                                     std::vector<std::vector<int>>(static_cast<std::size_t>(cfg.heads)));
  double distortion_sum = 0.0;
  for (const auto& x : eval_set) {
    Eigen::MatrixXd recon;
    Msmcr m;
    if (opts.bypass_quantization) {
      Tape t;
      ForwardOptions fo;
      fo.bypass_quantization = true;
      AnalyzerForward fwd = analyzer.forward(t, x, fo);
      recon = fwd.reconstruction.value().topRows(x.rows());
      m = analyzer.analyze(x);
    } else {
      m = analyzer.analyze(x);
      recon = analyzer.reconstruct(m);
    }
    // Frame-weighted so long and short items count by duration.
    distortion_sum += mel_distortion(x, recon) * static_cast<double>(x.rows());
    r.eval_frames += x.rows();
    for (int j = 0; j < cfg.stages(); ++j) {
      const auto ju = static_cast<std::size_t>(j);
      const Eigen::Index rows = valid_rows(m.valid_length, cfg.cumulative_rate(j));
      for (int k = 0; k < cfg.heads; ++k)
        for (Eigen::Index i = 0; i < rows; ++i) streams[ju][static_cast<std::size_t>(k)].push_back(m.stages[ju].indices(i, k));
    }
  }
  r.mel_distortion_db = distortion_sum / static_cast<double>(r.eval_frames);
  for (int j = 0; j < cfg.stages(); ++j)
    for (int k = 0; k < cfg.heads; ++k)
      r.usage.push_back({j + 1, k + 1, codebook_usage(streams[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)], cfg.codebook_size)});
  return r;
}

std::string RepresentationReport::table() const {
  std::ostringstream os;
  os << std::fixed;
  os << "representation  " << preset << "\n";
  os << "bits/frame      " << std::setprecision(4) << compression.bits_per_frame << "\n";
  os << "CR              " << compression.rounded << "  (" << std::setprecision(4) << compression.exact << ")\n";
  os << "mel distortion  " << std::setprecision(4) << mel_distortion_db << " dB over " << eval_items << " items, "
     << eval_frames << " frames\n";
  os << "\nstage  head  perplexity  dead\n";
  for (const auto& u : usage)
    os << std::setw(5) << u.stage << std::setw(6) << u.head << std::setw(12) << std::setprecision(3) << u.usage.perplexity
       << std::setw(6) << std::setprecision(3) << u.usage.dead_fraction << "\n";
  return os.str();
}

std::string RepresentationReport::key_values() const {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "preset=" << preset << "\n";
  os << "bits_per_frame=" << compression.bits_per_frame << "\n";
  os << "compression_ratio=" << compression.exact << "\n";
  os << "compression_ratio_rounded=" << compression.rounded << "\n";
  os << "mel_distortion_db=" << mel_distortion_db << "\n";
  os << "eval_items=" << eval_items << "\n";
  os << "eval_frames=" << eval_frames << "\n";
  for (const auto& u : usage) {
    const std::string p = "stage" + std::to_string(u.stage) + ".head" + std::to_string(u.head) + ".";
    os << p << "perplexity=" << u.usage.perplexity << "\n";
    os << p << "dead_fraction=" << u.usage.dead_fraction << "\n";
  }
  return os.str();
}

}  // namespace msmc
