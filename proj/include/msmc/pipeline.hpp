#pragma once

// Analysis-synthesis plumbing: log-mel extraction, vocoder input assembly and a
// pluggable waveform decoder with a phase-reconstruction stub.

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "msmc/config.hpp"
#include "msmc/msmcr.hpp"

namespace msmc {

/// HTK-style triangular filters, n_mels x (fft_size / 2 + 1), spanning 0 .. sample_rate / 2.
Eigen::MatrixXd mel_filterbank(const MelParams& p);

/// Frames = floor((samples - window) / shift) + 1; rows are natural-log mel energies floored at log_floor.
Eigen::MatrixXd mel_extract(const Eigen::VectorXd& waveform, const MelParams& p);

/// Every stage upsampled by repetition to stage-1 resolution and concatenated in stage order: L x (S * N).
Eigen::MatrixXd assemble_vocoder_input(const Msmcr& m);

/// Maps a feature sequence to samples. The default stub expects log-mel frames.
using WaveformDecoder = std::function<Eigen::VectorXd(const Eigen::MatrixXd& features, const MelParams& params)>;

class DecoderRegistry {
 public:
  /// Registry pre-populated with "griffin-lim".
  static DecoderRegistry with_defaults();

  void add(const std::string& name, WaveformDecoder decoder);
  const WaveformDecoder& get(const std::string& name) const;
  bool contains(const std::string& name) const { return decoders_.count(name) != 0; }
  std::vector<std::string> names() const;

 private:
  std::map<std::string, WaveformDecoder> decoders_;
};

/// Iterative phase reconstruction from the filterbank pseudo-inverse. Output is L * shift samples.
Eigen::VectorXd griffin_lim_decode(const Eigen::MatrixXd& log_mel, const MelParams& p, int iterations = 16);

Eigen::VectorXd decode_waveform(const Eigen::MatrixXd& features, const DecoderRegistry& registry,
                                const std::string& decoder, const MelParams& p);

/// 16-bit mono PCM, samples clipped to [-1, 1].
void write_wav(const std::string& path, const Eigen::VectorXd& samples, int sample_rate);

}  // namespace msmc
