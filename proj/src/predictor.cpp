#include "msmc/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "msmc/losses.hpp"

namespace msmc {

namespace {

std::vector<Eigen::Index> regulation_index(const std::vector<int>& durations, int multiple) {
  std::vector<Eigen::Index> idx;
  for (std::size_t i = 0; i < durations.size(); ++i) {
    if (durations[i] < 0) throw InputError("durations must be non-negative");
    for (int r = 0; r < durations[i]; ++r) idx.push_back(static_cast<Eigen::Index>(i));
  }
  if (idx.empty()) throw InputError("all durations are zero");
  while (multiple > 1 && idx.size() % static_cast<std::size_t>(multiple) != 0) idx.push_back(idx.back());
  return idx;
}

}  // namespace

Var length_regulate(Var encoded, const std::vector<int>& durations) {
  if (static_cast<Eigen::Index>(durations.size()) != encoded.rows())
    throw ContractViolation("one duration per encoded token is required");
  return ad::gather_rows(encoded, regulation_index(durations, 1));
}

int round_duration(double log_duration) {
  const double frames = std::exp(log_duration) - 1.0;
  const double rounded = std::floor(frames + 0.5);
  if (!(rounded >= 1.0)) return 1;
  return static_cast<int>(std::min(rounded, 1.0e6));
}

Predictor::Predictor(AnalyzerConfig structure, PredictorConfig cfg, Codebooks codebooks, std::uint64_t analyzer_hash,
                     std::uint64_t seed)
    : structure_(std::move(structure)),
      cfg_(std::move(cfg)),
      codebooks_(std::move(codebooks)),
      analyzer_hash_(analyzer_hash),
      store_(seed) {
  structure_.validate();
  cfg_.validate();
  const int s = structure_.stages();
  if (static_cast<int>(codebooks_.size()) != s) throw ConfigError("predictor needs one codebook set per analyzer stage");
  for (const auto& mcb : codebooks_) {
    mcb.validate();
    if (mcb.head_count() != structure_.heads || mcb.head_dim() != structure_.head_dim() ||
        mcb.size() != structure_.codebook_size)
      throw ConfigError("codebooks do not match the analyzer structure");
  }
  const Eigen::Index dm = cfg_.model_dim;
  const Eigen::Index n = structure_.code_dim;
  embedding_ = store_.xavier("predictor.embedding", cfg_.vocab_size, dm);
  text_enc_ = nn::BlockStack(store_, "predictor.text_enc", cfg_.block, cfg_.encoder_blocks, dm, cfg_.attention_heads);
  dur_blocks_.emplace_back(store_, "predictor.duration.0", dm);
  dur_blocks_.emplace_back(store_, "predictor.duration.1", dm);
  dur_head_ = nn::Linear(store_, "predictor.duration.head", dm, 1);
  for (int j = 0; j < s; ++j) {
    const std::string p = "predictor.stage" + std::to_string(j + 1);
    context_down_.push_back(nn::downsampler(store_, p + ".down", dm, dm, structure_.rates[static_cast<std::size_t>(j)]));
  }
  for (int j = 0; j < s; ++j) {
    const std::string p = "predictor.stage" + std::to_string(j + 1);
    const bool top = j == s - 1;
    dec_in_.emplace_back(store_, p + ".dec_in", top ? dm : 2 * dm + n, dm);
    dec_.emplace_back(store_, p + ".dec", cfg_.block, cfg_.decoder_blocks, dm, cfg_.attention_heads);
    dec_out_.emplace_back(store_, p + ".dec_out", dm, n);
  }
}

Var Predictor::encode_text(Tape& t, const std::vector<int>& tokens) const {
  if (tokens.empty()) throw InputError("empty text");
  std::vector<Eigen::Index> idx;
  idx.reserve(tokens.size());
  for (int tok : tokens) {
    if (tok < 0 || tok >= cfg_.vocab_size) throw InputError("token id " + std::to_string(tok) + " outside vocabulary");
    idx.push_back(tok);
  }
  Var x = ad::gather_rows(t.param(*embedding_), idx);
  return text_enc_(t, nn::add_positions(t, x));
}

Var Predictor::predict_log_durations(Tape& t, Var encoded) const {
  Var h = encoded;
  for (const auto& b : dur_blocks_) h = b(t, h);
  return dur_head_(t, h);
}

PredictorForward Predictor::regulate(Tape& t, const std::vector<int>& tokens, const std::vector<int>& durations) const {
  PredictorForward fwd;
  fwd.encoded = encode_text(t, tokens);
  fwd.log_durations = predict_log_durations(t, fwd.encoded);
  if (durations.size() != tokens.size()) throw InputError("one duration per token is required");
  const std::vector<Eigen::Index> idx = regulation_index(durations, structure_.total_rate());
  fwd.valid_length = std::accumulate(durations.begin(), durations.end(), 0);
  if (!structure_.pad && static_cast<int>(idx.size()) != fwd.valid_length)
    throw InputError("regulated length is not divisible by the total down-sampling rate and padding is disabled");
  fwd.regulated = ad::gather_rows(fwd.encoded, idx);
  for (int j = 0; j < structure_.stages(); ++j)
    fwd.stage_valid_rows.push_back(valid_rows(fwd.valid_length, structure_.cumulative_rate(j)));
  return fwd;
}

void Predictor::predict_stages(Tape& t, PredictorForward& fwd, const Msmcr* teacher) const {
  const int s = structure_.stages();
  if (!fwd.regulated.valid()) throw ContractViolation("predict_stages needs a regulated context sequence");
  if (teacher) {
    if (teacher->fingerprint != structure_.fingerprint())
      throw ConfigError("teacher MSMCR comes from a differently configured analyzer");
    if (teacher->stage_count() != s || teacher->length() != fwd.regulated.rows())
      throw ContractViolation("teacher MSMCR does not match the regulated length or stage count");
  }
  fwd.context.clear();
  Var c = fwd.regulated;
  for (int j = 0; j < s; ++j) {
    c = context_down_[static_cast<std::size_t>(j)](t, c);
    fwd.context.push_back(c);
  }
  fwd.hidden.assign(static_cast<std::size_t>(s), Var());
  fwd.predicted.assign(static_cast<std::size_t>(s), Var());
  fwd.feedback.assign(static_cast<std::size_t>(s), QuantizationResult<double>());

  for (int j = s - 1; j >= 0; --j) {
    const auto ju = static_cast<std::size_t>(j);
    Var in;
    if (j == s - 1) {
      in = dec_in_[ju](t, fwd.context[ju]);
    } else {
      const int rate = structure_.rates[ju + 1];
      Var up_hidden = ad::repeat_rows(fwd.hidden[ju + 1], rate);
      const Matrix& fb = teacher ? teacher->stages[ju + 1].vectors : fwd.feedback[ju + 1].quantized;
      Var up_codes = t.constant(upsample_repeat(fb, rate));
      in = dec_in_[ju](t, ad::hconcat(std::vector<Var>{up_hidden, up_codes, fwd.context[ju]}));
    }
    Var h = dec_[ju](t, nn::add_positions(t, in));
    fwd.hidden[ju] = h;
    fwd.predicted[ju] = dec_out_[ju](t, h);
    fwd.feedback[ju] = quantize_mh(fwd.predicted[ju].value(), codebooks_[ju]);
  }
}

PredictorForward Predictor::forward_teacher(Tape& t, const TextSequence& text, const Msmcr& teacher) const {
  PredictorForward fwd = regulate(t, text.tokens, text.durations);
  if (teacher.valid_length != fwd.valid_length)
    throw ContractViolation("durations do not sum to the teacher MSMCR's length");
  predict_stages(t, fwd, &teacher);
  return fwd;
}

std::vector<int> Predictor::predicted_durations(const std::vector<int>& tokens) const {
  Tape t;
  Var enc = encode_text(t, tokens);
  const Matrix ld = predict_log_durations(t, enc).value();
  std::vector<int> d;
  d.reserve(tokens.size());
  for (Eigen::Index i = 0; i < ld.rows(); ++i) d.push_back(round_duration(ld(i, 0)));
  return d;
}

PredictorForward Predictor::forward_inference(Tape& t, const std::vector<int>& tokens,
                                              const std::vector<int>& durations) const {
  const std::vector<int> d = durations.empty() ? predicted_durations(tokens) : durations;
  PredictorForward fwd = regulate(t, tokens, d);
  predict_stages(t, fwd, nullptr);
  return fwd;
}

Msmcr Predictor::package(const PredictorForward& fwd) const {
  Msmcr m;
  m.rates = structure_.rates;
  m.codebook_sizes.assign(structure_.rates.size(), structure_.codebook_size);
  m.heads = structure_.heads;
  m.valid_length = fwd.valid_length;
  m.fingerprint = structure_.fingerprint();
  for (const auto& q : fwd.feedback) m.stages.push_back(MsmcrStage{q.indices, q.quantized});
  return m;
}

Msmcr Predictor::synthesize(const std::vector<int>& tokens) const {
  Tape t;
  return package(forward_inference(t, tokens));
}

Msmcr Predictor::synthesize_aligned(const std::vector<int>& tokens, const std::vector<int>& durations) const {
  if (durations.empty()) throw InputError("aligned synthesis needs durations");
  Tape t;
  return package(forward_inference(t, tokens, durations));
}

Var predictor_mse_loss(Tape& t, const PredictorForward& fwd, const Msmcr& teacher) {
  const std::size_t s = fwd.predicted.size();
  if (s == 0 || teacher.stages.size() != s) throw ContractViolation("predictor outputs and teacher stage count differ");
  Var total;
  for (std::size_t j = 0; j < s; ++j) {
    if (fwd.predicted[j].rows() != teacher.stages[j].vectors.rows() ||
        fwd.predicted[j].cols() != teacher.stages[j].vectors.cols())
      throw ContractViolation("prediction and teacher shapes differ at stage " + std::to_string(j + 1));
    Var term = ad::mse(fwd.predicted[j], t.constant(teacher.stages[j].vectors), fwd.stage_valid_rows[j]);
    total = total.valid() ? total + term : term;
  }
  return ad::scale(total, 1.0 / static_cast<double>(s));
}

Var predictor_triplet_loss(Tape& t, const PredictorForward& fwd, const Msmcr& teacher, const Codebooks& codebooks,
                           double margin) {
  (void)t;
  const std::size_t s = fwd.predicted.size();
  if (s == 0 || teacher.stages.size() != s || codebooks.size() != s)
    throw ContractViolation("predictor outputs, teacher and codebooks differ in stage count");
  Var total;
  for (std::size_t j = 0; j < s; ++j) {
    Var term = ad::triplet_loss_rows(fwd.predicted[j], teacher.stages[j].indices, codebooks[j], margin,
                                     fwd.stage_valid_rows[j]);
    total = total.valid() ? total + term : term;
  }
  return ad::scale(total, 1.0 / static_cast<double>(s));
}

PredictorLoss predictor_loss(Tape& t, const PredictorForward& fwd, const TextSequence& text, const Msmcr& teacher,
                             const Codebooks& codebooks, const PredictorConfig& cfg) {
  PredictorLoss out;
  Var mse = predictor_mse_loss(t, fwd, teacher);
  Var tpl = predictor_triplet_loss(t, fwd, teacher, codebooks, cfg.margin);
  if (static_cast<Eigen::Index>(text.durations.size()) != fwd.log_durations.rows())
    throw ContractViolation("one target duration per token is required");
  Matrix target(fwd.log_durations.rows(), 1);
  for (std::size_t i = 0; i < text.durations.size(); ++i)
    target(static_cast<Eigen::Index>(i), 0) = std::log1p(static_cast<double>(text.durations[i]));
  Var dur = ad::mse(fwd.log_durations, t.constant(target));
  out.total = mse + cfg.gamma * tpl + cfg.duration_weight * dur;
  out.report.mse = mse.scalar();
  out.report.triplet = tpl.scalar();
  out.report.duration = dur.scalar();
  out.report.total = out.total.scalar();
  return out;
}

PredictorTrainer::PredictorTrainer(const AnalyzerConfig& structure, const PredictorConfig& cfg, const TrainConfig& train,
                                   Codebooks codebooks, std::uint64_t analyzer_hash)
    : train_(train),
      model_(structure, cfg, std::move(codebooks), analyzer_hash, train.seed + 1),
      rng_(train.seed ^ 0x5A5A5A5AULL) {
  train_.validate();
  adam_ = nn::Adam(model_.parameters(), nn::AdamOptions{0.9, 0.999, 1e-8, train_.clip_norm});
  schedule_ = nn::LearningRateSchedule{train_.lr_start, train_.lr_end, train_.lr_hold, train_.predictor_iterations};
}

std::vector<std::size_t> PredictorTrainer::next_batch(std::size_t corpus_size) {
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

PredictorLossReport PredictorTrainer::step(const std::vector<const PredictorExample*>& batch) {
  if (batch.empty()) throw InputError("empty training batch");
  const double w = 1.0 / static_cast<double>(batch.size());
  nn::GradientSet grads = nn::zero_gradients(model_.parameters());
  PredictorLossReport report;
  for (const PredictorExample* ex : batch) {
    Tape t;
    PredictorForward fwd = model_.forward_teacher(t, ex->text, ex->teacher);
    PredictorLoss loss = predictor_loss(t, fwd, ex->text, ex->teacher, model_.codebooks(), model_.config());
    const auto& r = loss.report;
    if (!std::isfinite(r.mse)) throw DivergenceError("mse", r.mse);
    if (!std::isfinite(r.triplet)) throw DivergenceError("triplet", r.triplet);
    if (!std::isfinite(r.duration)) throw DivergenceError("duration", r.duration);
    report.mse += w * r.mse;
    report.triplet += w * r.triplet;
    report.duration += w * r.duration;
    report.total += w * r.total;
    t.backward(ad::scale(loss.total, w));
    nn::collect_gradients(t, model_.parameters(), grads);
  }
  adam_.step(model_.parameters(), std::move(grads), learning_rate());
  ++iteration_;
  return report;
}

}  // namespace msmc
