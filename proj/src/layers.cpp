#include "msmc/layers.hpp"

#include <cmath>

namespace msmc::nn {

Parameter* ParameterStore::add(const std::string& name, Matrix value) {
  if (find(name)) throw ContractViolation("duplicate parameter name: " + name);
  params_.push_back(std::make_unique<Parameter>(Parameter{name, std::move(value)}));
  return params_.back().get();
}

Parameter* ParameterStore::xavier(const std::string& name, Eigen::Index fan_in, Eigen::Index fan_out) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix w(fan_in, fan_out);
  for (Eigen::Index c = 0; c < fan_out; ++c)
    for (Eigen::Index r = 0; r < fan_in; ++r) w(r, c) = dist(rng_);
  return add(name, std::move(w));
}

Parameter* ParameterStore::constant(const std::string& name, Eigen::Index rows, Eigen::Index cols, double value) {
  return add(name, Matrix::Constant(rows, cols, value));
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
  return n;
}

Parameter* ParameterStore::find(const std::string& name) {
  for (auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

Linear::Linear(ParameterStore& store, const std::string& name, Eigen::Index in, Eigen::Index out)
    : weight(store.xavier(name + ".weight", in, out)), bias(store.constant(name + ".bias", 1, out, 0.0)) {}

Var Linear::operator()(Tape& t, Var x) const {
  return ad::add_row(ad::matmul(x, t.param(*weight)), t.param(*bias));
}

Conv1d::Conv1d(ParameterStore& store, const std::string& name, Eigen::Index in, Eigen::Index out, int kernel_,
               int stride_, int pad_)
    : weight(store.xavier(name + ".weight", kernel_ * in, out)),
      bias(store.constant(name + ".bias", 1, out, 0.0)),
      kernel(kernel_),
      stride(stride_),
      pad(pad_) {}

Var Conv1d::operator()(Tape& t, Var x) const {
  Var cols = ad::im2col(x, kernel, stride, pad);
  return ad::add_row(ad::matmul(cols, t.param(*weight)), t.param(*bias));
}

Conv1d downsampler(ParameterStore& store, const std::string& name, Eigen::Index in, Eigen::Index out, int rate) {
  if (rate < 1) throw ConfigError("down-sampling rate must be >= 1");
  return Conv1d(store, name, in, out, 2 * rate + 1, rate, rate);
}

LayerNorm::LayerNorm(ParameterStore& store, const std::string& name, Eigen::Index dim)
    : gain(store.constant(name + ".gain", 1, dim, 1.0)), bias(store.constant(name + ".bias", 1, dim, 0.0)) {}

Var LayerNorm::operator()(Tape& t, Var x) const { return ad::layer_norm(x, t.param(*gain), t.param(*bias)); }

std::string to_string(BlockFamily f) { return f == BlockFamily::Transformer ? "transformer" : "conv"; }

BlockFamily block_family_from_string(const std::string& s) {
  if (s == "transformer") return BlockFamily::Transformer;
  if (s == "conv") return BlockFamily::Convolution;
  throw ConfigError("unknown block family '" + s + "' (expected transformer or conv)");
}

TransformerBlock::TransformerBlock(ParameterStore& store, const std::string& name, Eigen::Index dim, int heads)
    : q_(store, name + ".attn.q", dim, dim),
      k_(store, name + ".attn.k", dim, dim),
      v_(store, name + ".attn.v", dim, dim),
      o_(store, name + ".attn.o", dim, dim),
      ff1_(store, name + ".ff1", dim, 2 * dim),
      ff2_(store, name + ".ff2", 2 * dim, dim),
      ln1_(store, name + ".ln1", dim),
      ln2_(store, name + ".ln2", dim),
      heads_(heads) {
  if (heads < 1 || dim % heads != 0) throw ConfigError("model dimension must be divisible by attention heads");
}

Var TransformerBlock::operator()(Tape& t, Var x) const {
  const Eigen::Index dim = x.cols();
  const Eigen::Index hd = dim / heads_;
  Var q = q_(t, x);
  Var k = k_(t, x);
  Var v = v_(t, x);
  std::vector<Var> per_head;
  per_head.reserve(static_cast<std::size_t>(heads_));
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  for (int h = 0; h < heads_; ++h) {
    Var qh = ad::slice_cols(q, h * hd, hd);
    Var kh = ad::slice_cols(k, h * hd, hd);
    Var vh = ad::slice_cols(v, h * hd, hd);
    Var attn = ad::softmax_rows(ad::scale(ad::matmul_nt(qh, kh), inv_sqrt));
    per_head.push_back(ad::matmul(attn, vh));
  }
  Var mixed = heads_ == 1 ? per_head.front() : ad::hconcat(per_head);
  Var y = ln1_(t, x + o_(t, mixed));
  Var ff = ff2_(t, ad::gelu(ff1_(t, y)));
  return ln2_(t, y + ff);
}

ConvBlock::ConvBlock(ParameterStore& store, const std::string& name, Eigen::Index dim)
    : conv_(store, name + ".conv", dim, dim, 3, 1, 1), ln_(store, name + ".ln", dim) {}

Var ConvBlock::operator()(Tape& t, Var x) const { return ln_(t, x + ad::gelu(conv_(t, x))); }

BlockStack::BlockStack(ParameterStore& store, const std::string& name, BlockFamily family, int count, Eigen::Index dim,
                       int attention_heads) {
  for (int i = 0; i < count; ++i) {
    const std::string bn = name + "." + std::to_string(i);
    if (family == BlockFamily::Transformer)
      blocks_.push_back(std::make_shared<TransformerBlock>(store, bn, dim, attention_heads));
    else
      blocks_.push_back(std::make_shared<ConvBlock>(store, bn, dim));
  }
}

Var BlockStack::operator()(Tape& t, Var x) const {
  for (const auto& b : blocks_) x = (*b)(t, x);
  return x;
}

Matrix position_encoding(Eigen::Index length, Eigen::Index dim) {
  Matrix pe(length, dim);
  for (Eigen::Index pos = 0; pos < length; ++pos)
    for (Eigen::Index i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      pe(pos, i) = (i % 2 == 0) ? std::sin(pos * freq) : std::cos(pos * freq);
    }
  return pe;
}

Var add_positions(Tape& t, Var x) { return x + t.constant(position_encoding(x.rows(), x.cols())); }

}  // namespace msmc::nn
