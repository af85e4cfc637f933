#pragma once

// Loop-level references for the analyzer and predictor losses, shared by the
// unit tests and the acceptance run.

#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "msmc/analyzer.hpp"
#include "msmc/predictor.hpp"
#include "oracles.hpp"
#include "toys.hpp"

namespace oracle {

using namespace msmc;

// Loss straight from forward values with plain loops.
inline double analyzer_loss(const AnalyzerForward& f, const AnalyzerConfig& cfg, const Codebooks& cbs) {
  const int s = cfg.stages();
  double total = mean_square(f.reconstruction.value(), f.input, f.valid_length);
  double commit = 0.0;
  for (int j = 0; j < s; ++j)
    commit += mean_square(f.hidden[j].value(), f.quant[j].quantized, f.stage_valid_rows[j]);
  total += cfg.alpha / s * commit;
  if (s >= 2) {
    double pred = 0.0;
    for (int j = 0; j < s - 1; ++j) {
      std::vector<Eigen::MatrixXd> codes;
      for (const auto& h : cbs[j].heads) codes.push_back(h.codes);
      const Eigen::MatrixXi targets = f.quant[j].indices;
      pred += mean_square(f.predicted[j].value(), f.quant[j].quantized, f.stage_valid_rows[j]) +
              cfg.gamma * triplet_rows(f.predicted[j].value(), targets, codes, cfg.margin, f.stage_valid_rows[j]);
    }
    total += cfg.beta / (s - 1) * pred;
  }
  return total;
}

/// An analyzer plus a few text/teacher pairs with random durations.
struct Fixture {
  Analyzer analyzer;
  std::vector<PredictorExample> examples;

  explicit Fixture(AnalyzerConfig cfg, int count = 4, std::uint64_t seed = 3) : analyzer(cfg, seed) {
    std::mt19937_64 rng(seed);
    for (int n = 0; n < count; ++n) {
      PredictorExample ex;
      const int tokens = 2 + static_cast<int>(rng() % 3);
      for (int i = 0; i < tokens; ++i) {
        ex.text.tokens.push_back(static_cast<int>(rng() % 5));
        ex.text.durations.push_back(1 + static_cast<int>(rng() % 3));
      }
      const int len = std::accumulate(ex.text.durations.begin(), ex.text.durations.end(), 0);
      ex.teacher = analyzer.analyze(toy::sequences(1, len, cfg.feature_dim, rng())[0]);
      examples.push_back(std::move(ex));
    }
  }

  std::vector<const PredictorExample*> batch() const {
    std::vector<const PredictorExample*> b;
    for (const auto& e : examples) b.push_back(&e);
    return b;
  }
};

// MSE with explicit stage / head / frame / dim loops.
inline double predictor_mse(const PredictorForward& f, const Msmcr& teacher) {
  const std::size_t s = f.predicted.size();
  const int heads = teacher.heads;
  double total = 0.0;
  for (std::size_t j = 0; j < s; ++j) {
    const Eigen::MatrixXd& p = f.predicted[j].value();
    const Eigen::MatrixXd& q = teacher.stages[j].vectors;
    const long hd = p.cols() / heads;
    const long rows = f.stage_valid_rows[j];
    double stage = 0.0;
    for (int k = 0; k < heads; ++k) {
      double head = 0.0;
      for (long i = 0; i < rows; ++i) {
        double frame = 0.0;
        for (long c = 0; c < hd; ++c) frame += (p(i, k * hd + c) - q(i, k * hd + c)) * (p(i, k * hd + c) - q(i, k * hd + c));
        head += frame / static_cast<double>(hd);
      }
      stage += head / static_cast<double>(rows);
    }
    total += stage / heads;
  }
  return total / static_cast<double>(s);
}

inline double predictor_triplet(const PredictorForward& f, const Msmcr& teacher, const Codebooks& cbs, double margin) {
  double total = 0.0;
  for (std::size_t j = 0; j < f.predicted.size(); ++j) {
    std::vector<Eigen::MatrixXd> codes;
    for (const auto& h : cbs[j].heads) codes.push_back(h.codes);
    const Eigen::MatrixXi targets = teacher.stages[j].indices;
    total += triplet_rows(f.predicted[j].value(), targets, codes, margin, f.stage_valid_rows[j]);
  }
  return total / static_cast<double>(f.predicted.size());
}

inline double duration_loss(const PredictorForward& f, const TextSequence& text) {
  double s = 0.0;
  for (std::size_t i = 0; i < text.durations.size(); ++i) {
    const double d = f.log_durations.value()(static_cast<long>(i), 0) - std::log(1.0 + text.durations[i]);
    s += d * d;
  }
  return s / static_cast<double>(text.durations.size());
}

struct GradCheck {
  int compared = 0;
  double worst = 0.0;
};

/// Central differences on up to `per_tensor` sampled entries of every parameter
/// tensor; entries where both gradients are below 1e-7 are skipped.
inline GradCheck parameter_grad_check(nn::ParameterStore& store, const Tape& tape, const std::function<double()>& loss,
                                      std::mt19937_64& rng, int per_tensor = 12, double step = 1e-5) {
  GradCheck out;
  for (auto& p : store.all()) {
    const Eigen::MatrixXd g = tape.grad(*p);
    for (int n = 0; n < per_tensor; ++n) {
      const Eigen::Index r = static_cast<Eigen::Index>(rng() % static_cast<unsigned>(p->value.rows()));
      const Eigen::Index c = static_cast<Eigen::Index>(rng() % static_cast<unsigned>(p->value.cols()));
      const double keep = p->value(r, c);
      p->value(r, c) = keep + step;
      const double up = loss();
      p->value(r, c) = keep - step;
      const double down = loss();
      p->value(r, c) = keep;
      const double numeric = (up - down) / (2 * step);
      if (std::abs(numeric) < 1e-7 && std::abs(g(r, c)) < 1e-7) continue;
      out.worst = std::max(out.worst, rel_err(g(r, c), numeric));
      ++out.compared;
    }
  }
  return out;
}

}  // namespace oracle
