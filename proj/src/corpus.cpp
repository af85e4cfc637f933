#include "msmc/corpus.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

namespace msmc {

namespace {

using nlohmann::json;

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

json spec_to_json(const SyntheticCorpusSpec& s) {
  return {{"n_sequences", s.n_sequences}, {"min_tokens", s.min_tokens},     {"max_tokens", s.max_tokens},
          {"feature_dim", s.feature_dim}, {"vocab_size", s.vocab_size},     {"min_duration", s.min_duration},
          {"max_duration", s.max_duration}, {"noise", s.noise},             {"seed", s.seed}};
}

SyntheticCorpusSpec spec_from_json(const json& j) {
  SyntheticCorpusSpec s;
  s.n_sequences = j.at("n_sequences").get<int>();
  s.min_tokens = j.at("min_tokens").get<int>();
  s.max_tokens = j.at("max_tokens").get<int>();
  s.feature_dim = j.at("feature_dim").get<int>();
  s.vocab_size = j.at("vocab_size").get<int>();
  s.min_duration = j.at("min_duration").get<int>();
  s.max_duration = j.at("max_duration").get<int>();
  s.noise = j.at("noise").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

}  // namespace

Eigen::VectorXd token_envelope(int token, const SyntheticCorpusSpec& spec) {
  if (token < 0 || token >= spec.vocab_size) throw InputError("token id outside the vocabulary");
  std::mt19937_64 rng(mix(spec.seed, 0x1000 + static_cast<std::uint64_t>(token)));
  std::uniform_real_distribution<double> centre(0.0, 1.0);
  std::uniform_real_distribution<double> width(0.05, 0.15);
  std::uniform_real_distribution<double> height(0.8, 2.0);
  std::uniform_real_distribution<double> tilt(-1.0, 1.0);
  const int d = spec.feature_dim;
  const double slope = tilt(rng);
  Eigen::VectorXd env(d);
  for (int b = 0; b < d; ++b) env(b) = -1.0 + slope * (static_cast<double>(b) / std::max(1, d - 1) - 0.5);
  // Formant-like bumps on top of a spectral tilt.
  for (int f = 0; f < 3; ++f) {
    const double c = centre(rng);
    const double w = width(rng);
    const double h = height(rng);
    for (int b = 0; b < d; ++b) {
      const double x = static_cast<double>(b) / std::max(1, d - 1) - c;
      env(b) += h * std::exp(-0.5 * x * x / (w * w));
    }
  }
  return env;
}

int token_duration(int token, const SyntheticCorpusSpec& spec) {
  const int span = spec.max_duration - spec.min_duration + 1;
  return spec.min_duration + static_cast<int>(mix(spec.seed, 0x2000 + static_cast<std::uint64_t>(token)) % static_cast<std::uint64_t>(span));
}

Corpus generate_corpus(const SyntheticCorpusSpec& spec) { return generate_corpus(spec, spec.seed); }

Corpus generate_corpus(const SyntheticCorpusSpec& spec, std::uint64_t sentence_seed) {
  spec.validate();
  Corpus c;
  c.spec = spec;
  std::vector<Eigen::VectorXd> env;
  for (int v = 0; v < spec.vocab_size; ++v) env.push_back(token_envelope(v, spec));

  c.stats.noise_floor = spec.noise * std::sqrt(static_cast<double>(spec.feature_dim));
  c.stats.min_envelope_gap = spec.vocab_size > 1 ? std::numeric_limits<double>::infinity() : 0.0;
  for (int a = 0; a < spec.vocab_size; ++a)
    for (int b = a + 1; b < spec.vocab_size; ++b)
      c.stats.min_envelope_gap = std::min(c.stats.min_envelope_gap, (env[static_cast<std::size_t>(a)] - env[static_cast<std::size_t>(b)]).norm());

  std::mt19937_64 rng(sentence_seed);
  std::uniform_int_distribution<int> n_tokens(spec.min_tokens, spec.max_tokens);
  std::uniform_int_distribution<int> token(0, spec.vocab_size - 1);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> period(20.0, 60.0);
  std::normal_distribution<double> noise(0.0, spec.noise);

  for (int n = 0; n < spec.n_sequences; ++n) {
    CorpusItem item;
    const int t = n_tokens(rng);
    for (int i = 0; i < t; ++i) {
      const int v = token(rng);
      item.text.tokens.push_back(v);
      item.text.durations.push_back(token_duration(v, spec));
    }
    long frames = 0;
    for (int d : item.text.durations) frames += d;
    const double ph = phase(rng);
    const double per = period(rng);
    item.features.resize(frames, spec.feature_dim);
    Eigen::Index row = 0;
    for (int i = 0; i < t; ++i) {
      const auto& cur = env[static_cast<std::size_t>(item.text.tokens[static_cast<std::size_t>(i)])];
      for (int k = 0; k < item.text.durations[static_cast<std::size_t>(i)]; ++k, ++row) {
        Eigen::VectorXd f = cur;
        if (k == 0 && i > 0) f = 0.75 * cur + 0.25 * env[static_cast<std::size_t>(item.text.tokens[static_cast<std::size_t>(i - 1)])];
        const double drift = 0.1 * std::sin(2.0 * std::numbers::pi * static_cast<double>(row) / per + ph);
        for (int b = 0; b < spec.feature_dim; ++b) item.features(row, b) = f(b) + drift + noise(rng);
      }
    }
    c.items.push_back(std::move(item));
  }
  return c;
}

void write_corpus(const Corpus& corpus, const std::string& directory) {
  namespace fs = std::filesystem;
  fs::create_directories(directory);
  json manifest = {{"spec", spec_to_json(corpus.spec)},
                   {"items", corpus.items.size()},
                   {"min_envelope_gap", corpus.stats.min_envelope_gap},
                   {"noise_floor", corpus.stats.noise_floor}};
  std::ofstream(fs::path(directory) / "corpus.json") << manifest.dump(2) << "\n";
  for (std::size_t n = 0; n < corpus.items.size(); ++n) {
    const auto& it = corpus.items[n];
    json frames = json::array();
    for (Eigen::Index r = 0; r < it.features.rows(); ++r) {
      json row = json::array();
      for (Eigen::Index b = 0; b < it.features.cols(); ++b) row.push_back(it.features(r, b));
      frames.push_back(std::move(row));
    }
    json j = {{"tokens", it.text.tokens}, {"durations", it.text.durations}, {"features", std::move(frames)}};
    std::ostringstream name;
    name << "item_" << std::setw(4) << std::setfill('0') << n << ".json";
    std::ofstream(fs::path(directory) / name.str()) << j.dump() << "\n";
  }
}

Corpus read_corpus(const std::string& directory) {
  namespace fs = std::filesystem;
  const fs::path manifest_path = fs::path(directory) / "corpus.json";
  std::ifstream in(manifest_path);
  if (!in) throw InputError("no corpus.json in '" + directory + "'");
  Corpus c;
  try {
    const json manifest = json::parse(in);
    c.spec = spec_from_json(manifest.at("spec"));
    c.stats.min_envelope_gap = manifest.value("min_envelope_gap", 0.0);
    c.stats.noise_floor = manifest.value("noise_floor", 0.0);
    const auto count = manifest.at("items").get<std::size_t>();
    for (std::size_t n = 0; n < count; ++n) {
      std::ostringstream name;
      name << "item_" << std::setw(4) << std::setfill('0') << n << ".json";
      std::ifstream f(fs::path(directory) / name.str());
      if (!f) throw InputError("corpus item " + name.str() + " is missing");
      const json j = json::parse(f);
      CorpusItem it;
      it.text.tokens = j.at("tokens").get<std::vector<int>>();
      it.text.durations = j.at("durations").get<std::vector<int>>();
      const auto& frames = j.at("features");
      it.features.resize(static_cast<Eigen::Index>(frames.size()), c.spec.feature_dim);
      for (std::size_t r = 0; r < frames.size(); ++r) {
        if (frames[r].size() != static_cast<std::size_t>(c.spec.feature_dim)) throw InputError("corpus frame has the wrong width");
        for (std::size_t b = 0; b < frames[r].size(); ++b)
          it.features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(b)) = frames[r][b].get<double>();
      }
      long total = 0;
      for (int d : it.text.durations) total += d;
      if (total != it.features.rows() || it.text.tokens.size() != it.text.durations.size())
        throw InputError("corpus item " + name.str() + " has durations that do not cover its frames");
      c.items.push_back(std::move(it));
    }
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed corpus: ") + e.what());
  }
  return c;
}

std::vector<int> read_token_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read '" + path + "'");
  std::vector<int> tokens;
  std::string word;
  while (in >> word) {
    try {
      std::size_t used = 0;
      tokens.push_back(std::stoi(word, &used));
      if (used != word.size()) throw std::invalid_argument(word);
    } catch (const std::exception&) {
      throw InputError("token file contains a non-integer entry '" + word + "'");
    }
  }
  if (tokens.empty()) throw InputError("token file '" + path + "' is empty");
  return tokens;
}

}  // namespace msmc
