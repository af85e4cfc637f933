#include "msmc/analyzer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "msmc/losses.hpp"

namespace msmc {

PaddedSequence pad_to_multiple(const Matrix& x, int multiple, bool allow_padding) {
  if (multiple < 1) throw ContractViolation("padding multiple must be >= 1");
  if (x.rows() < 1) throw InputError("empty feature sequence");
  PaddedSequence p;
  p.valid_length = static_cast<int>(x.rows());
  const Eigen::Index rem = x.rows() % multiple;
  if (rem == 0) {
    p.frames = x;
    return p;
  }
  if (!allow_padding)
    throw InputError("sequence length " + std::to_string(x.rows()) + " is not divisible by " +
                     std::to_string(multiple) + " and padding is disabled");
  const Eigen::Index padded = x.rows() + (multiple - rem);
  p.frames.resize(padded, x.cols());
  p.frames.topRows(x.rows()) = x;
  for (Eigen::Index i = x.rows(); i < padded; ++i) p.frames.row(i) = x.row(x.rows() - 1);
  return p;
}

FrozenQuantization AnalyzerForward::freeze() const {
  FrozenQuantization f;
  for (std::size_t j = 0; j < quant.size(); ++j) {
    f.indices.push_back(quant[j].indices);
    f.offsets.push_back(quant[j].quantized - hidden[j].value());
  }
  return f;
}

Analyzer::Analyzer(AnalyzerConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), store_(seed) {
  cfg_.validate();
  const int s = cfg_.stages();
  const Eigen::Index dm = cfg_.model_dim;
  const Eigen::Index n = cfg_.code_dim;
  in_proj_ = nn::Linear(store_, "analyzer.in_proj", cfg_.feature_dim, dm);
  for (int j = 0; j < s; ++j) {
    const std::string p = "analyzer.stage" + std::to_string(j + 1);
    down_.push_back(nn::downsampler(store_, p + ".down", dm, dm, cfg_.rates[static_cast<std::size_t>(j)]));
    enc_.emplace_back(store_, p + ".enc", cfg_.block, cfg_.enc_blocks, dm, cfg_.attention_heads);
  }
  for (int j = 0; j < s; ++j) {
    const std::string p = "analyzer.stage" + std::to_string(j + 1);
    const bool top = j == s - 1;
    pre_quant_.emplace_back(store_, p + ".pre_quant", top ? dm : 2 * dm, n);
    fuse_.emplace_back(store_, p + ".fuse", top ? n : dm + n, dm);
    res_.emplace_back(store_, p + ".residual", cfg_.block, 1, dm, cfg_.attention_heads);
    if (!top) predict_.emplace_back(store_, p + ".predict", dm, n);
  }
  dec_ = nn::BlockStack(store_, "analyzer.dec", cfg_.block, cfg_.dec_blocks, dm, cfg_.attention_heads);
  out_proj_ = nn::Linear(store_, "analyzer.out_proj", dm, cfg_.feature_dim);

  for (int j = 0; j < s; ++j) {
    MultiHeadCodebook<double> mcb;
    for (int k = 0; k < cfg_.heads; ++k) {
      const std::uint64_t cb_seed = seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(1000 * (j + 1) + k);
      mcb.heads.push_back(codebook_init<double>(cfg_.codebook_size, cfg_.head_dim(), cb_seed, CodebookInit::Uniform,
                                                cfg_.ema_decay, cfg_.ema_eps));
    }
    codebooks_.push_back(std::move(mcb));
  }
}

PaddedSequence Analyzer::prepare(const Matrix& x) const {
  if (x.cols() != cfg_.feature_dim)
    throw InputError("feature width " + std::to_string(x.cols()) + " does not match analyzer feature_dim " +
                     std::to_string(cfg_.feature_dim));
  if (!x.allFinite()) throw InputError("non-finite feature value");
  return pad_to_multiple(x, cfg_.total_rate(), cfg_.pad);
}

std::vector<Var> Analyzer::encode_stages(Tape& t, Var x) const {
  if (x.rows() % cfg_.total_rate() != 0) throw InputError("sequence length is not a multiple of the total down-sampling rate");
  std::vector<Var> out;
  Var z = in_proj_(t, x);
  for (int j = 0; j < cfg_.stages(); ++j) {
    z = down_[static_cast<std::size_t>(j)](t, z);
    z = enc_[static_cast<std::size_t>(j)](t, z);
    out.push_back(z);
  }
  return out;
}

Var Analyzer::residual_step(Tape& t, int stage, Var q, const Var* upsampled) const {
  const auto j = static_cast<std::size_t>(stage);
  Var in = upsampled ? fuse_[j](t, ad::hconcat(*upsampled, q)) + *upsampled : fuse_[j](t, q);
  return res_[j](t, in);
}

void Analyzer::quantize_top_down(Tape& t, AnalyzerForward& fwd, const ForwardOptions& opts) const {
  const int s = cfg_.stages();
  if (static_cast<int>(fwd.encoded.size()) != s) throw ContractViolation("encoder outputs do not match stage count");
  if (opts.frozen && (static_cast<int>(opts.frozen->indices.size()) != s || static_cast<int>(opts.frozen->offsets.size()) != s))
    throw ContractViolation("frozen quantization does not match stage count");
  fwd.hidden.assign(static_cast<std::size_t>(s), Var());
  fwd.quant.assign(static_cast<std::size_t>(s), QuantizationResult<double>());
  fwd.quantized.assign(static_cast<std::size_t>(s), Var());
  fwd.residual.assign(static_cast<std::size_t>(s), Var());
  fwd.predicted.assign(static_cast<std::size_t>(s - 1), Var());

  Var up;
  for (int j = s - 1; j >= 0; --j) {
    const auto ju = static_cast<std::size_t>(j);
    const bool top = j == s - 1;
    Var h = pre_quant_[ju](t, top ? fwd.encoded[ju] : ad::hconcat(up, fwd.encoded[ju]));
    // Inputs were checked finite, so a non-finite hidden means the weights blew up.
    if (!h.value().allFinite())
      throw DivergenceError("hidden[stage " + std::to_string(j + 1) + "]", std::nan(""));
    QuantizationResult<double> qr;
    Var q;
    if (opts.frozen) {
      qr.indices = opts.frozen->indices[ju];
      qr.quantized = dequantize_mh(qr.indices, codebooks_[ju]);
      q = h + t.constant(opts.frozen->offsets[ju]);
    } else {
      qr = quantize_mh(h.value(), codebooks_[ju]);
      if (opts.bypass_quantization) {
        // q := h; the commitment term vanishes and predictions target h.
        qr.quantized = h.value();
        q = h;
      } else {
        q = ad::straight_through(h, t.constant(qr.quantized));
      }
    }
    if (!top) fwd.predicted[ju] = predict_[ju](t, up);
    Var r = residual_step(t, j, q, top ? nullptr : &up);
    fwd.hidden[ju] = h;
    fwd.quant[ju] = std::move(qr);
    fwd.quantized[ju] = q;
    fwd.residual[ju] = r;
    if (j > 0) up = ad::repeat_rows(r, cfg_.rates[ju]);
  }
}

Var Analyzer::decode(Tape& t, Var fused) const { return out_proj_(t, dec_(t, fused)); }

AnalyzerForward Analyzer::forward(Tape& t, const Matrix& x, const ForwardOptions& opts) const {
  PaddedSequence ps = prepare(x);
  AnalyzerForward fwd;
  fwd.input = std::move(ps.frames);
  fwd.valid_length = ps.valid_length;
  for (int j = 0; j < cfg_.stages(); ++j)
    fwd.stage_valid_rows.push_back(valid_rows(fwd.valid_length, cfg_.cumulative_rate(j)));
  fwd.encoded = encode_stages(t, t.constant(fwd.input));
  quantize_top_down(t, fwd, opts);
  fwd.reconstruction = decode(t, fwd.residual.front());
  return fwd;
}

Msmcr Analyzer::analyze(const Matrix& x) const {
  Tape t;
  AnalyzerForward fwd = forward(t, x);
  Msmcr m;
  m.rates = cfg_.rates;
  m.codebook_sizes.assign(cfg_.rates.size(), cfg_.codebook_size);
  m.heads = cfg_.heads;
  m.valid_length = fwd.valid_length;
  m.fingerprint = cfg_.fingerprint();
  for (auto& q : fwd.quant) m.stages.push_back(MsmcrStage{std::move(q.indices), std::move(q.quantized)});
  return m;
}

Matrix Analyzer::reconstruct(const Msmcr& m) const {
  if (m.fingerprint != cfg_.fingerprint()) throw ConfigError("MSMCR was produced by a differently configured analyzer");
  m.validate();
  if (m.stage_count() != cfg_.stages()) throw ContractViolation("MSMCR stage count does not match analyzer");
  Tape t;
  Var up;
  Var r;
  for (int j = cfg_.stages() - 1; j >= 0; --j) {
    const auto ju = static_cast<std::size_t>(j);
    Var q = t.constant(m.stages[ju].vectors);
    r = residual_step(t, j, q, j == cfg_.stages() - 1 ? nullptr : &up);
    if (j > 0) up = ad::repeat_rows(r, cfg_.rates[ju]);
  }
  Var out = decode(t, r);
  const Eigen::Index keep = std::min<Eigen::Index>(m.valid_length > 0 ? m.valid_length : out.rows(), out.rows());
  return out.value().topRows(keep);
}

AnalyzerLoss analyzer_loss(Tape& t, const AnalyzerForward& fwd, const AnalyzerConfig& cfg, const Codebooks& codebooks) {
  const int s = cfg.stages();
  if (static_cast<int>(fwd.hidden.size()) != s || static_cast<int>(codebooks.size()) != s)
    throw ContractViolation("forward outputs do not match stage count");
  AnalyzerLoss out;
  Var recon = ad::mse(fwd.reconstruction, t.constant(fwd.input), fwd.valid_length);
  out.report.recon_mse = recon.scalar();
  Var total = recon;

  std::vector<Var> commits;
  for (int j = 0; j < s; ++j) {
    const auto ju = static_cast<std::size_t>(j);
    Var c = ad::mse(fwd.hidden[ju], t.constant(fwd.quant[ju].quantized), fwd.stage_valid_rows[ju]);
    out.report.commit_per_stage.push_back(c.scalar());
    commits.push_back(c);
  }
  Var commit_sum = commits.front();
  for (std::size_t j = 1; j < commits.size(); ++j) commit_sum = commit_sum + commits[j];
  total = total + (cfg.alpha / s) * commit_sum;

  if (s >= 2) {
    Var pred_sum;
    for (int j = 0; j < s - 1; ++j) {
      const auto ju = static_cast<std::size_t>(j);
      const Eigen::Index rows = fwd.stage_valid_rows[ju];
      Var target = t.constant(fwd.quant[ju].quantized);
      Var term = ad::mse(fwd.predicted[ju], target, rows) +
                 cfg.gamma * ad::triplet_loss_rows(fwd.predicted[ju], fwd.quant[ju].indices, codebooks[ju], cfg.margin, rows);
      out.report.predict_per_stage.push_back(term.scalar());
      pred_sum = pred_sum.valid() ? pred_sum + term : term;
    }
    total = total + (cfg.beta / (s - 1)) * pred_sum;
  }
  out.total = total;
  out.report.total = total.scalar();
  return out;
}

AnalyzerTrainer::AnalyzerTrainer(const AnalyzerConfig& cfg, const TrainConfig& train)
    : train_(train), model_(cfg, train.seed), rng_(train.seed ^ 0xA5A5A5A5ULL) {
  train_.validate();
  adam_ = nn::Adam(model_.parameters(), nn::AdamOptions{0.9, 0.999, 1e-8, train_.clip_norm});
  schedule_ = nn::LearningRateSchedule{train_.lr_start, train_.lr_end, train_.lr_hold, train_.analyzer_iterations};
}

std::vector<std::size_t> AnalyzerTrainer::next_batch(std::size_t corpus_size) {
  std::vector<std::size_t> idx(corpus_size);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const auto b = static_cast<std::size_t>(train_.batch_size);
  if (corpus_size <= b) return idx;
  for (std::size_t i = 0; i < b; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, corpus_size - 1);
    std::swap(idx[i], idx[pick(rng_)]);
  }
  idx.resize(b);
  return idx;
}

namespace {

void check_finite(const AnalyzerLossReport& r) {
  if (!std::isfinite(r.recon_mse)) throw DivergenceError("recon_mse", r.recon_mse);
  for (std::size_t j = 0; j < r.commit_per_stage.size(); ++j)
    if (!std::isfinite(r.commit_per_stage[j]))
      throw DivergenceError("commit[stage " + std::to_string(j + 1) + "]", r.commit_per_stage[j]);
  for (std::size_t j = 0; j < r.predict_per_stage.size(); ++j)
    if (!std::isfinite(r.predict_per_stage[j]))
      throw DivergenceError("predict[stage " + std::to_string(j + 1) + "]", r.predict_per_stage[j]);
  if (!std::isfinite(r.total)) throw DivergenceError("total", r.total);
}

void accumulate_report(AnalyzerLossReport& into, const AnalyzerLossReport& r, double w) {
  if (into.commit_per_stage.empty()) {
    into.commit_per_stage.assign(r.commit_per_stage.size(), 0.0);
    into.predict_per_stage.assign(r.predict_per_stage.size(), 0.0);
  }
  into.recon_mse += w * r.recon_mse;
  for (std::size_t j = 0; j < r.commit_per_stage.size(); ++j) into.commit_per_stage[j] += w * r.commit_per_stage[j];
  for (std::size_t j = 0; j < r.predict_per_stage.size(); ++j) into.predict_per_stage[j] += w * r.predict_per_stage[j];
  into.total += w * r.total;
}

}  // namespace

AnalyzerLossReport AnalyzerTrainer::step(const std::vector<Matrix>& batch) {
  if (batch.empty()) throw InputError("empty training batch");
  const AnalyzerConfig& cfg = model_.config();
  const double w = 1.0 / static_cast<double>(batch.size());
  nn::GradientSet grads = nn::zero_gradients(model_.parameters());
  std::vector<std::vector<EmaBatch<double>>> ema(static_cast<std::size_t>(cfg.stages()));
  for (auto& stage : ema)
    stage.assign(static_cast<std::size_t>(cfg.heads), EmaBatch<double>(cfg.codebook_size, cfg.head_dim()));

  AnalyzerLossReport report;
  for (const Matrix& x : batch) {
    Tape t;
    AnalyzerForward fwd = model_.forward(t, x, options_);
    AnalyzerLoss loss = analyzer_loss(t, fwd, cfg, model_.codebooks());
    check_finite(loss.report);
    accumulate_report(report, loss.report, w);
    t.backward(ad::scale(loss.total, w));
    nn::collect_gradients(t, model_.parameters(), grads);
    if (options_.bypass_quantization) continue;
    const Eigen::Index hd = cfg.head_dim();
    for (int j = 0; j < cfg.stages(); ++j) {
      const auto ju = static_cast<std::size_t>(j);
      const Matrix& h = fwd.hidden[ju].value();
      const IndexMatrix& idx = fwd.quant[ju].indices;
      for (Eigen::Index i = 0; i < fwd.stage_valid_rows[ju]; ++i)
        for (int k = 0; k < cfg.heads; ++k) ema[ju][static_cast<std::size_t>(k)].add(idx(i, k), h.row(i).segment(k * hd, hd));
    }
  }

  adam_.step(model_.parameters(), std::move(grads), learning_rate());
  if (!options_.bypass_quantization)
    for (std::size_t j = 0; j < ema.size(); ++j)
      for (std::size_t k = 0; k < ema[j].size(); ++k) ema_update(model_.codebooks()[j].heads[k], ema[j][k]);
  ++iteration_;
  return report;
}

}  // namespace msmc
