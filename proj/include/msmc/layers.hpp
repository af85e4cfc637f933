#pragma once

// Building blocks shared by the analyzer and the predictor. Each layer holds
// non-owning pointers into a ParameterStore and is applied to a Tape.

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "msmc/autodiff.hpp"

namespace msmc::nn {

using ad::Matrix;
using ad::Parameter;
using ad::Tape;
using ad::Var;

/// Owns every parameter of a model in creation order (the checkpoint order).
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed = 0) : rng_(seed) {}
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) = default;
  ParameterStore& operator=(ParameterStore&&) = default;

  Parameter* xavier(const std::string& name, Eigen::Index fan_in, Eigen::Index fan_out);
  Parameter* constant(const std::string& name, Eigen::Index rows, Eigen::Index cols, double value);

  std::vector<std::unique_ptr<Parameter>>& all() { return params_; }
  const std::vector<std::unique_ptr<Parameter>>& all() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  Parameter* find(const std::string& name);

 private:
  Parameter* add(const std::string& name, Matrix value);
  std::vector<std::unique_ptr<Parameter>> params_;
  std::mt19937_64 rng_;
};

struct Linear {
  Parameter* weight = nullptr;  // in x out
  Parameter* bias = nullptr;    // 1 x out

  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, Eigen::Index in, Eigen::Index out);
  Var operator()(Tape& t, Var x) const;
  Eigen::Index in_dim() const { return weight->value.rows(); }
  Eigen::Index out_dim() const { return weight->value.cols(); }
};

/// 1-D convolution over frames; zero padding, output length (L + 2*pad - kernel) / stride + 1.
struct Conv1d {
  Parameter* weight = nullptr;  // (kernel*in) x out
  Parameter* bias = nullptr;
  int kernel = 1;
  int stride = 1;
  int pad = 0;

  Conv1d() = default;
  Conv1d(ParameterStore& store, const std::string& name, Eigen::Index in, Eigen::Index out, int kernel, int stride,
         int pad);
  Var operator()(Tape& t, Var x) const;
};

/// Strided down-sampling layer with kernel 2d+1 and padding d, so length L maps to L/d.
Conv1d downsampler(ParameterStore& store, const std::string& name, Eigen::Index in, Eigen::Index out, int rate);

struct LayerNorm {
  Parameter* gain = nullptr;
  Parameter* bias = nullptr;

  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& name, Eigen::Index dim);
  Var operator()(Tape& t, Var x) const;
};

enum class BlockFamily { Transformer, Convolution };

std::string to_string(BlockFamily f);
BlockFamily block_family_from_string(const std::string& s);

class SequenceBlock {
 public:
  virtual ~SequenceBlock() = default;
  virtual Var operator()(Tape& t, Var x) const = 0;
};

/// Post-norm feed-forward Transformer block: x + MHA(x) -> LN -> x + FFN(x) -> LN.
class TransformerBlock final : public SequenceBlock {
 public:
  TransformerBlock(ParameterStore& store, const std::string& name, Eigen::Index dim, int heads);
  Var operator()(Tape& t, Var x) const override;

 private:
  Linear q_, k_, v_, o_, ff1_, ff2_;
  LayerNorm ln1_, ln2_;
  int heads_;
};

/// Kernel-3 convolution, GELU, residual add, layer norm.
class ConvBlock final : public SequenceBlock {
 public:
  ConvBlock(ParameterStore& store, const std::string& name, Eigen::Index dim);
  Var operator()(Tape& t, Var x) const override;

 private:
  Conv1d conv_;
  LayerNorm ln_;
};

class BlockStack {
 public:
  BlockStack() = default;
  BlockStack(ParameterStore& store, const std::string& name, BlockFamily family, int count, Eigen::Index dim,
             int attention_heads);
  Var operator()(Tape& t, Var x) const;
  std::size_t size() const { return blocks_.size(); }

 private:
  std::vector<std::shared_ptr<const SequenceBlock>> blocks_;
};

/// Sinusoidal position encodings, L x dim.
Matrix position_encoding(Eigen::Index length, Eigen::Index dim);

/// x + position encodings (as a constant).
Var add_positions(Tape& t, Var x);

}  // namespace msmc::nn
