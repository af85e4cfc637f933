#include "msmc/optim.hpp"

#include <algorithm>
#include <cmath>

namespace msmc::nn {

GradientSet zero_gradients(const ParameterStore& store) {
  GradientSet g;
  g.reserve(store.size());
  for (const auto& p : store.all()) g.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  return g;
}

void collect_gradients(const Tape& tape, const ParameterStore& store, GradientSet& into) {
  if (into.size() != store.size()) throw ContractViolation("gradient set does not match parameter store");
  for (std::size_t i = 0; i < store.size(); ++i) into[i] += tape.grad(*store.all()[i]);
}

double gradient_norm(const GradientSet& g) {
  double s = 0.0;
  for (const auto& m : g) s += m.squaredNorm();
  return std::sqrt(s);
}

double LearningRateSchedule::at(long iteration) const {
  if (iteration <= hold || total <= hold || start <= 0.0) return start;
  const double frac = std::min(1.0, static_cast<double>(iteration - hold) / static_cast<double>(total - hold));
  return start * std::pow(end / start, frac);
}

Adam::Adam(const ParameterStore& store, AdamOptions opts) : opts_(opts) {
  state_.m = zero_gradients(store);
  state_.v = zero_gradients(store);
}

void Adam::step(ParameterStore& store, GradientSet grads, double lr) {
  if (grads.size() != store.size() || state_.m.size() != store.size())
    throw ContractViolation("optimizer state does not match parameter store");
  if (opts_.clip_norm > 0.0) {
    const double norm = gradient_norm(grads);
    if (norm > opts_.clip_norm)
      for (auto& g : grads) g *= opts_.clip_norm / norm;
  }
  ++state_.step;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(state_.step));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(state_.step));
  for (std::size_t i = 0; i < store.size(); ++i) {
    Matrix& m = state_.m[i];
    Matrix& v = state_.v[i];
    m = opts_.beta1 * m + (1.0 - opts_.beta1) * grads[i];
    v = opts_.beta2 * v + (1.0 - opts_.beta2) * grads[i].cwiseProduct(grads[i]);
    if (lr == 0.0) continue;
    const Matrix update = (m / bc1).array() / ((v / bc2).array().sqrt() + opts_.eps);
    store.all()[i]->value -= lr * update;
  }
}

}  // namespace msmc::nn
