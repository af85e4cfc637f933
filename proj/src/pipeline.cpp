#include "msmc/pipeline.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <fstream>
#include <numbers>

namespace msmc {

namespace {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

Eigen::VectorXd hann(int n) {
  Eigen::VectorXd w(n);
  for (int i = 0; i < n; ++i) w(i) = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
  return w;
}

// Magnitude and phase of one windowed frame.
std::vector<std::complex<double>> frame_spectrum(Eigen::FFT<double>& fft, const Eigen::VectorXd& frame, int fft_size) {
  std::vector<double> buf(static_cast<std::size_t>(fft_size), 0.0);
  for (Eigen::Index i = 0; i < frame.size(); ++i) buf[static_cast<std::size_t>(i)] = frame(i);
  std::vector<std::complex<double>> spec;
  fft.fwd(spec, buf);
  spec.resize(static_cast<std::size_t>(fft_size / 2 + 1));
  return spec;
}

}  // namespace

Eigen::MatrixXd mel_filterbank(const MelParams& p) {
  p.validate();
  const int bins = p.fft_size / 2 + 1;
  const double mel_lo = hz_to_mel(0.0);
  const double mel_hi = hz_to_mel(p.sample_rate / 2.0);
  std::vector<double> edges(static_cast<std::size_t>(p.n_mels + 2));
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) / static_cast<double>(p.n_mels + 1));
  Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(p.n_mels, bins);
  for (int m = 0; m < p.n_mels; ++m) {
    const double lo = edges[static_cast<std::size_t>(m)];
    const double mid = edges[static_cast<std::size_t>(m + 1)];
    const double hi = edges[static_cast<std::size_t>(m + 2)];
    for (int k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * p.sample_rate / p.fft_size;
      double w = 0.0;
      if (f > lo && f <= mid)
        w = (f - lo) / (mid - lo);
      else if (f > mid && f < hi)
        w = (hi - f) / (hi - mid);
      fb(m, k) = w;
    }
  }
  return fb;
}

Eigen::MatrixXd mel_extract(const Eigen::VectorXd& waveform, const MelParams& p) {
  p.validate();
  const int win = p.window_samples();
  const int shift = p.shift_samples();
  if (waveform.size() < win) throw InputError("waveform is shorter than one analysis window");
  if (!waveform.allFinite()) throw InputError("non-finite waveform sample");
  const Eigen::Index frames = (waveform.size() - win) / shift + 1;
  const Eigen::MatrixXd fb = mel_filterbank(p);
  const Eigen::VectorXd window = hann(win);
  Eigen::FFT<double> fft;
  Eigen::MatrixXd out(frames, p.n_mels);
  Eigen::VectorXd mag(fb.cols());
  for (Eigen::Index t = 0; t < frames; ++t) {
    const Eigen::VectorXd frame = waveform.segment(t * shift, win).cwiseProduct(window);
    const auto spec = frame_spectrum(fft, frame, p.fft_size);
    for (Eigen::Index k = 0; k < mag.size(); ++k) mag(k) = std::abs(spec[static_cast<std::size_t>(k)]);
    const Eigen::VectorXd mel = fb * mag;
    for (int m = 0; m < p.n_mels; ++m) out(t, m) = std::log(std::max(mel(m), p.log_floor));
  }
  return out;
}

Eigen::MatrixXd assemble_vocoder_input(const Msmcr& m) {
  m.validate();
  const Eigen::Index len = m.length();
  Eigen::Index width = 0;
  for (const auto& s : m.stages) width += s.vectors.cols();
  Eigen::MatrixXd out(len, width);
  Eigen::Index col = 0;
  int cumulative = 1;
  for (std::size_t j = 0; j < m.stages.size(); ++j) {
    if (j > 0) cumulative *= m.rates[j];
    const auto& v = m.stages[j].vectors;
    if (v.rows() * cumulative != len) throw ContractViolation("MSMCR length chain violated");
    for (Eigen::Index i = 0; i < len; ++i) out.row(i).segment(col, v.cols()) = v.row(i / cumulative);
    col += v.cols();
  }
  return out;
}

DecoderRegistry DecoderRegistry::with_defaults() {
  DecoderRegistry r;
  r.add("griffin-lim", [](const Eigen::MatrixXd& f, const MelParams& p) { return griffin_lim_decode(f, p); });
  return r;
}

void DecoderRegistry::add(const std::string& name, WaveformDecoder decoder) {
  if (!decoder) throw ContractViolation("cannot register an empty decoder");
  decoders_[name] = std::move(decoder);
}

const WaveformDecoder& DecoderRegistry::get(const std::string& name) const {
  auto it = decoders_.find(name);
  if (it == decoders_.end()) throw ConfigError("no waveform decoder registered under '" + name + "'");
  return it->second;
}

std::vector<std::string> DecoderRegistry::names() const {
  std::vector<std::string> n;
  for (const auto& kv : decoders_) n.push_back(kv.first);
  return n;
}

Eigen::VectorXd griffin_lim_decode(const Eigen::MatrixXd& log_mel, const MelParams& p, int iterations) {
  p.validate();
  if (log_mel.cols() != p.n_mels) throw InputError("griffin-lim stub expects n_mels log-mel columns");
  if (log_mel.rows() < 1) throw InputError("no frames to decode");
  const int win = p.window_samples();
  const int shift = p.shift_samples();
  const int bins = p.fft_size / 2 + 1;
  const Eigen::Index frames = log_mel.rows();
  const Eigen::MatrixXd fb = mel_filterbank(p);
  const Eigen::MatrixXd inv = fb.completeOrthogonalDecomposition().pseudoInverse();  // bins x n_mels
  const Eigen::MatrixXd target = (inv * log_mel.array().exp().matrix().transpose()).cwiseMax(0.0);  // bins x L

  const Eigen::VectorXd window = hann(win);
  const Eigen::Index full = (frames - 1) * shift + win;
  Eigen::VectorXd norm = Eigen::VectorXd::Zero(full);
  for (Eigen::Index t = 0; t < frames; ++t) norm.segment(t * shift, win) += window.cwiseProduct(window);

  Eigen::FFT<double> fft;
  std::vector<std::vector<std::complex<double>>> spec(static_cast<std::size_t>(frames));
  for (Eigen::Index t = 0; t < frames; ++t) {
    auto& s = spec[static_cast<std::size_t>(t)];
    s.assign(static_cast<std::size_t>(bins), {0.0, 0.0});
    for (int k = 0; k < bins; ++k) s[static_cast<std::size_t>(k)] = {target(k, t), 0.0};
  }

  auto synthesize = [&]() {
    Eigen::VectorXd y = Eigen::VectorXd::Zero(full);
    std::vector<std::complex<double>> half;
    std::vector<double> time;
    for (Eigen::Index t = 0; t < frames; ++t) {
      half = spec[static_cast<std::size_t>(t)];
      fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
      fft.inv(time, half, p.fft_size);
      for (int i = 0; i < win; ++i) y(t * shift + i) += time[static_cast<std::size_t>(i)] * window(i);
    }
    for (Eigen::Index i = 0; i < full; ++i)
      if (norm(i) > 1e-8) y(i) /= norm(i);
    return y;
  };

  Eigen::VectorXd y = synthesize();
  for (int it = 0; it < iterations; ++it) {
    for (Eigen::Index t = 0; t < frames; ++t) {
      const Eigen::VectorXd frame = y.segment(t * shift, win).cwiseProduct(window);
      fft.ClearFlag(Eigen::FFT<double>::HalfSpectrum);
      auto s = frame_spectrum(fft, frame, p.fft_size);
      for (int k = 0; k < bins; ++k) {
        const double a = std::abs(s[static_cast<std::size_t>(k)]);
        const std::complex<double> phase = a > 1e-12 ? s[static_cast<std::size_t>(k)] / a : std::complex<double>(1.0, 0.0);
        spec[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)] = target(k, t) * phase;
      }
    }
    y = synthesize();
  }
  fft.ClearFlag(Eigen::FFT<double>::HalfSpectrum);

  const Eigen::Index n_out = frames * shift;
  const Eigen::Index offset = std::min<Eigen::Index>((win - shift) / 2, full - n_out);
  return y.segment(std::max<Eigen::Index>(offset, 0), n_out);
}

Eigen::VectorXd decode_waveform(const Eigen::MatrixXd& features, const DecoderRegistry& registry,
                                const std::string& decoder, const MelParams& p) {
  return registry.get(decoder)(features, p);
}

void write_wav(const std::string& path, const Eigen::VectorXd& samples, int sample_rate) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path + "'");
  auto put32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xFF));
  };
  auto put16 = [&](std::uint16_t v) {
    out.put(static_cast<char>(v & 0xFF));
    out.put(static_cast<char>(v >> 8));
  };
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  out.write("RIFF", 4);
  put32(36 + data_bytes);
  out.write("WAVEfmt ", 8);
  put32(16);
  put16(1);
  put16(1);
  put32(static_cast<std::uint32_t>(sample_rate));
  put32(static_cast<std::uint32_t>(sample_rate * 2));
  put16(2);
  put16(16);
  out.write("data", 4);
  put32(data_bytes);
  for (Eigen::Index i = 0; i < samples.size(); ++i) {
    const double v = std::clamp(samples(i), -1.0, 1.0);
    put16(static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(v * 32767.0))));
  }
}

}  // namespace msmc
