#pragma once

#include <cstdint>
#include <vector>

#include "msmc/layers.hpp"

namespace msmc::nn {

/// Gradients aligned with a ParameterStore's creation order.
using GradientSet = std::vector<Matrix>;

GradientSet zero_gradients(const ParameterStore& store);
/// Adds the tape's gradient for every stored parameter into `into`.
void collect_gradients(const Tape& tape, const ParameterStore& store, GradientSet& into);
double gradient_norm(const GradientSet& g);

/// Held at `start` for `hold` iterations, then exponential decay reaching `end` at `total`.
struct LearningRateSchedule {
  double start = 2e-4;
  double end = 1e-6;
  long hold = 0;
  long total = 1;

  double at(long iteration) const;
};

struct AdamState {
  long step = 0;
  std::vector<Matrix> m;
  std::vector<Matrix> v;
};

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 0.0;  // 0 disables global-norm clipping
};

class Adam {
 public:
  Adam() = default;
  Adam(const ParameterStore& store, AdamOptions opts);

  void step(ParameterStore& store, GradientSet grads, double lr);

  AdamState& state() { return state_; }
  const AdamState& state() const { return state_; }
  const AdamOptions& options() const { return opts_; }

 private:
  AdamOptions opts_;
  AdamState state_;
};

}  // namespace msmc::nn
