#pragma once

// Small configurations shared by the model tests.

#include <random>
#include <vector>

#include "msmc/config.hpp"
#include "msmc/msmcr.hpp"
#include "oracles.hpp"

namespace toy {

inline msmc::AnalyzerConfig analyzer(std::vector<int> rates = {1, 2}, int heads = 2, int m = 8) {
  msmc::AnalyzerConfig c;
  c.feature_dim = 6;
  c.rates = std::move(rates);
  c.heads = heads;
  c.codebook_size = m;
  c.code_dim = 2 * heads;
  c.model_dim = 8;
  c.enc_blocks = 1;
  c.dec_blocks = 1;
  c.attention_heads = 2;
  return c;
}

inline msmc::TrainConfig train(double lr = 2e-3, long iterations = 200) {
  msmc::TrainConfig t;
  t.analyzer_iterations = iterations;
  t.predictor_iterations = iterations;
  t.batch_size = 8;
  t.lr_start = lr;
  t.lr_end = lr > 0 ? lr : 0.0;
  t.lr_hold = 0;
  t.seed = 5;
  return t;
}

inline msmc::PredictorConfig predictor() {
  msmc::PredictorConfig p;
  p.vocab_size = 5;
  p.model_dim = 8;
  p.encoder_blocks = 1;
  p.decoder_blocks = 1;
  p.attention_heads = 2;
  return p;
}

/// Whole-experiment toy for command and checkpoint tests; 80-wide so the stub decoder accepts it.
inline msmc::ExperimentConfig experiment(long iterations = 6) {
  msmc::ExperimentConfig c = msmc::make_preset("V3");
  c.analyzer = analyzer({1, 2});
  c.analyzer.feature_dim = 80;
  c.predictor = predictor();
  c.data.synthetic.n_sequences = 4;
  c.data.synthetic.min_tokens = 2;
  c.data.synthetic.max_tokens = 4;
  c.data.synthetic.feature_dim = 80;
  c.data.synthetic.vocab_size = 5;
  c.data.synthetic.min_duration = 1;
  c.data.synthetic.max_duration = 3;
  c.data.eval_sequences = 2;
  c.train.analyzer_iterations = iterations;
  c.train.predictor_iterations = iterations;
  c.train.batch_size = 4;
  c.train.lr_start = c.train.lr_end = 2e-3;
  c.train.lr_hold = 0;
  c.train.checkpoint_every = 3;
  c.train.log_every = 1000;
  return c;
}

/// Piecewise-constant sequences with a little noise, like the synthetic corpus.
inline std::vector<Eigen::MatrixXd> sequences(int count, int length, int dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Eigen::MatrixXd> out;
  for (int n = 0; n < count; ++n) {
    Eigen::MatrixXd x(length, dim);
    Eigen::RowVectorXd level = oracle::random_matrix(rng, 1, dim);
    for (int i = 0; i < length; ++i) {
      if (i % 3 == 0) level = oracle::random_matrix(rng, 1, dim);
      x.row(i) = level + oracle::random_matrix(rng, 1, dim, -0.05, 0.05);
    }
    out.push_back(x);
  }
  return out;
}

inline msmc::MultiHeadCodebook<double> random_codebook(std::mt19937_64& rng, int heads, int m, int hd) {
  msmc::MultiHeadCodebook<double> mcb;
  for (int k = 0; k < heads; ++k) {
    mcb.heads.push_back(msmc::codebook_init<double>(m, hd, rng()));
    mcb.heads.back().codes = oracle::random_matrix(rng, m, hd);
  }
  return mcb;
}

/// Random indices with stage-1 length top_len * prod(rates); vectors from `cbs`.
inline msmc::Msmcr random_msmcr(std::mt19937_64& rng, const std::vector<int>& rates, int heads, int m, int top_len,
                   const msmc::Codebooks& cbs) {
  msmc::Msmcr x;
  x.rates = rates;
  x.codebook_sizes.assign(rates.size(), m);
  x.heads = heads;
  int len = top_len;
  std::vector<int> lengths(rates.size());
  for (std::size_t j = rates.size(); j-- > 0;) {
    lengths[j] = len;
    len *= rates[j];
  }
  for (std::size_t j = 0; j < rates.size(); ++j) {
    msmc::MsmcrStage st;
    st.indices.resize(lengths[j], heads);
    for (int i = 0; i < lengths[j]; ++i)
      for (int k = 0; k < heads; ++k) st.indices(i, k) = static_cast<int>(rng() % static_cast<unsigned>(m));
    x.stages.push_back(std::move(st));
  }
  x.valid_length = static_cast<int>(x.stages.front().indices.rows());
  rematerialize(x, cbs);
  return x;
}

}  // namespace toy
