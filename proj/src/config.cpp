#include "msmc/config.hpp"

#include <yaml-cpp/yaml.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace msmc {

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a(const std::string& s) { return fnv1a(s.data(), s.size()); }

int AnalyzerConfig::cumulative_rate(int stage) const {
  int r = 1;
  for (int i = 0; i <= stage && i < stages(); ++i) r *= rates[static_cast<std::size_t>(i)];
  return r;
}

QuantizerLayout AnalyzerConfig::layout() const {
  QuantizerLayout l;
  l.rates = rates;
  l.codebook_sizes.assign(rates.size(), std::vector<int>(static_cast<std::size_t>(heads), codebook_size));
  return l;
}

void AnalyzerConfig::validate() const {
  if (feature_dim < 1) throw ConfigError("analyzer.feature_dim must be >= 1");
  if (rates.empty()) throw ConfigError("analyzer.rates must name at least one stage");
  for (int d : rates)
    if (d < 1) throw ConfigError("analyzer.rates entries must be integers >= 1");
  if (heads < 1) throw ConfigError("analyzer.heads must be >= 1");
  if (codebook_size < 2) throw ConfigError("analyzer.codebook_size must be >= 2");
  if (code_dim < 1 || code_dim % heads != 0) throw ConfigError("analyzer.code_dim must be a positive multiple of heads");
  if (model_dim < 1) throw ConfigError("analyzer.model_dim must be >= 1");
  if (enc_blocks < 0 || dec_blocks < 0) throw ConfigError("analyzer block counts must be >= 0");
  if (block == nn::BlockFamily::Transformer && (attention_heads < 1 || model_dim % attention_heads != 0))
    throw ConfigError("analyzer.model_dim must be divisible by analyzer.attention_heads");
  if (alpha < 0 || beta < 0 || gamma < 0) throw ConfigError("analyzer loss weights must be >= 0");
  if (!(margin > 0)) throw ConfigError("analyzer.margin must be > 0");
  if (!(ema_decay >= 0 && ema_decay <= 1)) throw ConfigError("analyzer.ema_decay must lie in [0, 1]");
  if (!(ema_eps >= 0)) throw ConfigError("analyzer.ema_eps must be >= 0");
}

std::uint64_t AnalyzerConfig::fingerprint() const {
  std::ostringstream s;
  s << "msmc-analyzer|" << feature_dim << "|";
  for (int d : rates) s << d << ",";
  s << "|" << heads << "|" << codebook_size << "|" << code_dim << "|" << model_dim << "|" << enc_blocks << "|"
    << dec_blocks << "|" << nn::to_string(block) << "|" << attention_heads;
  return fnv1a(s.str());
}

void PredictorConfig::validate() const {
  if (vocab_size < 1) throw ConfigError("predictor.vocab_size must be >= 1");
  if (model_dim < 1) throw ConfigError("predictor.model_dim must be >= 1");
  if (encoder_blocks < 0 || decoder_blocks < 0) throw ConfigError("predictor block counts must be >= 0");
  if (block == nn::BlockFamily::Transformer && (attention_heads < 1 || model_dim % attention_heads != 0))
    throw ConfigError("predictor.model_dim must be divisible by predictor.attention_heads");
  if (gamma < 0 || duration_weight < 0) throw ConfigError("predictor loss weights must be >= 0");
  if (!(margin > 0)) throw ConfigError("predictor.margin must be > 0");
}

int MelParams::shift_samples() const { return static_cast<int>(std::lround(frame_shift * sample_rate)); }
int MelParams::window_samples() const { return static_cast<int>(std::lround(window_length * sample_rate)); }

void MelParams::validate() const {
  if (sample_rate < 1 || n_mels < 1) throw ConfigError("mel.sample_rate and mel.n_mels must be positive");
  if (!(frame_shift > 0) || !(window_length > 0)) throw ConfigError("mel frame shift and window must be positive");
  if (frame_shift > window_length) throw ConfigError("mel.frame_shift must not exceed mel.window_length");
  if (fft_size < window_samples()) throw ConfigError("mel.fft_size must cover the window");
  if (!(log_floor > 0)) throw ConfigError("mel.log_floor must be > 0");
}

void TrainConfig::validate() const {
  if (analyzer_iterations < 0 || predictor_iterations < 0) throw ConfigError("iteration counts must be >= 0");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (lr_start < 0 || lr_end < 0) throw ConfigError("learning rates must be >= 0");
  if (lr_start > 0 && !(lr_end > 0)) throw ConfigError("train.lr_end must be > 0 when decaying");
  if (lr_hold < 0) throw ConfigError("train.lr_hold must be >= 0");
  if (clip_norm < 0) throw ConfigError("train.clip_norm must be >= 0");
  if (checkpoint_every < 0 || log_every < 1) throw ConfigError("train checkpoint/log intervals are invalid");
}

void SyntheticCorpusSpec::validate() const {
  if (n_sequences < 1) throw ConfigError("synthetic.n_sequences must be >= 1");
  if (vocab_size < 1) throw ConfigError("synthetic.vocab_size must be >= 1");
  if (min_tokens < 1 || max_tokens < min_tokens) throw ConfigError("synthetic token range is empty");
  if (min_duration < 1 || max_duration < min_duration) throw ConfigError("synthetic duration range is invalid");
  if (feature_dim < 1) throw ConfigError("synthetic.feature_dim must be >= 1");
  if (!(noise >= 0)) throw ConfigError("synthetic.noise must be >= 0");
}

void ExperimentConfig::validate() const {
  analyzer.validate();
  predictor.validate();
  mel.validate();
  train.validate();
  data.synthetic.validate();
  if (data.synthetic.feature_dim != analyzer.feature_dim)
    throw ConfigError("synthetic.feature_dim must equal analyzer.feature_dim");
  if (data.synthetic.vocab_size > predictor.vocab_size)
    throw ConfigError("predictor.vocab_size must cover synthetic.vocab_size");
  if (predictor.model_dim < 1) throw ConfigError("predictor.model_dim must be >= 1");
  if (data.eval_sequences < 0) throw ConfigError("data.eval_sequences must be >= 0");
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"V1", "V2", "V3", "M1", "M2", "M3", "reference"};
  return names;
}

ExperimentConfig make_preset(const std::string& name) {
  ExperimentConfig c;
  c.preset = name;
  // Desk-scale training defaults shared by every preset except "reference".
  c.train.lr_start = 2e-4;
  c.train.lr_end = 2e-5;
  if (name == "V1") {
    c.analyzer.rates = {1};
    c.analyzer.heads = 1;
  } else if (name == "V2") {
    c.analyzer.rates = {1};
    c.analyzer.heads = 4;
  } else if (name == "V3") {
    c.analyzer.rates = {1, 4};
    c.analyzer.heads = 4;
  } else if (name == "M1" || name == "M2" || name == "M3") {
    c.analyzer.rates = {1, 4};
    c.analyzer.heads = 4;
    // Predictor text encoder and decoders both take the variant.
    if (name == "M1") {
      c.predictor.block = nn::BlockFamily::Transformer;
      c.predictor.encoder_blocks = c.predictor.decoder_blocks = 4;
      c.predictor.model_dim = 96;
    } else if (name == "M2") {
      c.predictor.block = nn::BlockFamily::Transformer;
      c.predictor.encoder_blocks = c.predictor.decoder_blocks = 3;
      c.predictor.model_dim = 32;
    } else {
      c.predictor.block = nn::BlockFamily::Convolution;
      c.predictor.encoder_blocks = c.predictor.decoder_blocks = 4;
      c.predictor.model_dim = 32;
    }
  } else if (name == "reference") {
    c.analyzer.rates = {1, 4};
    c.analyzer.heads = 4;
    c.analyzer.model_dim = 256;
    c.analyzer.code_dim = 256;
    c.analyzer.enc_blocks = c.analyzer.dec_blocks = 4;
    c.analyzer.attention_heads = 4;
    c.predictor.model_dim = 600;
    c.predictor.encoder_blocks = c.predictor.decoder_blocks = 6;
    c.predictor.attention_heads = 4;
    c.train.analyzer_iterations = 200000;
    c.train.predictor_iterations = 100000;
    c.train.batch_size = 64;
    c.train.lr_start = 2e-4;
    c.train.lr_end = 1e-6;
    c.train.lr_hold = 20000;
    c.train.checkpoint_every = 10000;
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }
  c.predictor.gamma = c.analyzer.gamma;
  c.predictor.margin = c.analyzer.margin;
  return c;
}

// ---------------------------------------------------------------------------
// YAML

namespace {

std::string format_double(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

void emit(YAML::Emitter& out, const std::string& key, double v) { out << YAML::Key << key << YAML::Value << format_double(v); }
void emit(YAML::Emitter& out, const std::string& key, int v) { out << YAML::Key << key << YAML::Value << v; }
void emit(YAML::Emitter& out, const std::string& key, long v) { out << YAML::Key << key << YAML::Value << v; }
void emit(YAML::Emitter& out, const std::string& key, std::uint64_t v) { out << YAML::Key << key << YAML::Value << v; }
void emit(YAML::Emitter& out, const std::string& key, bool v) { out << YAML::Key << key << YAML::Value << v; }
void emit(YAML::Emitter& out, const std::string& key, const std::string& v) {
  out << YAML::Key << key << YAML::Value << v;
}

class Section {
 public:
  Section(const YAML::Node& node, std::string path)
      : node_(node), path_(std::move(path)), present_(node.IsDefined() && !node.IsNull()) {
    if (present_ && !node_.IsMap()) throw ConfigError("config section '" + path_ + "' must be a mapping");
  }

  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() > 0 || !present_) return;
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (!seen_.count(key)) throw ConfigError("unknown config key '" + path_ + key + "'");
    }
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    seen_.insert(key);
    if (!present_ || !node_[key]) return;
    try {
      out = node_[key].template as<T>();
    } catch (const YAML::Exception& e) {
      throw ConfigError("bad value for '" + path_ + key + "': " + e.what());
    }
  }

  void read_family(const std::string& key, nn::BlockFamily& out) {
    std::string s = nn::to_string(out);
    read(key, s);
    out = nn::block_family_from_string(s);
  }

  YAML::Node child(const std::string& key) {
    seen_.insert(key);
    return present_ ? node_[key] : YAML::Node();
  }

 private:
  YAML::Node node_;
  std::string path_;
  bool present_ = false;
  std::set<std::string> seen_;
};

}  // namespace

std::string to_yaml(const ExperimentConfig& c) {
  YAML::Emitter out;
  out << YAML::BeginMap;
  emit(out, "preset", c.preset);

  out << YAML::Key << "analyzer" << YAML::Value << YAML::BeginMap;
  emit(out, "feature_dim", c.analyzer.feature_dim);
  out << YAML::Key << "rates" << YAML::Value << YAML::Flow << c.analyzer.rates;
  emit(out, "heads", c.analyzer.heads);
  emit(out, "codebook_size", c.analyzer.codebook_size);
  emit(out, "code_dim", c.analyzer.code_dim);
  emit(out, "model_dim", c.analyzer.model_dim);
  emit(out, "enc_blocks", c.analyzer.enc_blocks);
  emit(out, "dec_blocks", c.analyzer.dec_blocks);
  emit(out, "block", nn::to_string(c.analyzer.block));
  emit(out, "attention_heads", c.analyzer.attention_heads);
  emit(out, "alpha", c.analyzer.alpha);
  emit(out, "beta", c.analyzer.beta);
  emit(out, "gamma", c.analyzer.gamma);
  emit(out, "margin", c.analyzer.margin);
  emit(out, "ema_decay", c.analyzer.ema_decay);
  emit(out, "ema_eps", c.analyzer.ema_eps);
  emit(out, "pad", c.analyzer.pad);
  out << YAML::EndMap;

  out << YAML::Key << "predictor" << YAML::Value << YAML::BeginMap;
  emit(out, "vocab_size", c.predictor.vocab_size);
  emit(out, "model_dim", c.predictor.model_dim);
  emit(out, "encoder_blocks", c.predictor.encoder_blocks);
  emit(out, "decoder_blocks", c.predictor.decoder_blocks);
  emit(out, "block", nn::to_string(c.predictor.block));
  emit(out, "attention_heads", c.predictor.attention_heads);
  emit(out, "gamma", c.predictor.gamma);
  emit(out, "margin", c.predictor.margin);
  emit(out, "duration_weight", c.predictor.duration_weight);
  out << YAML::EndMap;

  out << YAML::Key << "mel" << YAML::Value << YAML::BeginMap;
  emit(out, "sample_rate", c.mel.sample_rate);
  emit(out, "n_mels", c.mel.n_mels);
  emit(out, "frame_shift", c.mel.frame_shift);
  emit(out, "window_length", c.mel.window_length);
  emit(out, "fft_size", c.mel.fft_size);
  emit(out, "log_floor", c.mel.log_floor);
  out << YAML::EndMap;

  out << YAML::Key << "train" << YAML::Value << YAML::BeginMap;
  emit(out, "analyzer_iterations", c.train.analyzer_iterations);
  emit(out, "predictor_iterations", c.train.predictor_iterations);
  emit(out, "batch_size", c.train.batch_size);
  emit(out, "lr_start", c.train.lr_start);
  emit(out, "lr_end", c.train.lr_end);
  emit(out, "lr_hold", c.train.lr_hold);
  emit(out, "clip_norm", c.train.clip_norm);
  emit(out, "seed", c.train.seed);
  emit(out, "checkpoint_every", c.train.checkpoint_every);
  emit(out, "log_every", c.train.log_every);
  out << YAML::EndMap;

  out << YAML::Key << "data" << YAML::Value << YAML::BeginMap;
  if (c.data.directory) emit(out, "directory", *c.data.directory);
  emit(out, "eval_sequences", c.data.eval_sequences);
  out << YAML::Key << "synthetic" << YAML::Value << YAML::BeginMap;
  const auto& s = c.data.synthetic;
  emit(out, "n_sequences", s.n_sequences);
  emit(out, "min_tokens", s.min_tokens);
  emit(out, "max_tokens", s.max_tokens);
  emit(out, "feature_dim", s.feature_dim);
  emit(out, "vocab_size", s.vocab_size);
  emit(out, "min_duration", s.min_duration);
  emit(out, "max_duration", s.max_duration);
  emit(out, "noise", s.noise);
  emit(out, "seed", s.seed);
  out << YAML::EndMap;
  out << YAML::EndMap;

  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

ExperimentConfig from_yaml(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config is not valid YAML: ") + e.what());
  }
  if (root.IsNull()) root = YAML::Node(YAML::NodeType::Map);

  std::string preset = "V3";
  if (root.IsMap() && root["preset"]) preset = root["preset"].as<std::string>();
  ExperimentConfig c = make_preset(preset);

  {
    Section top(root, "");
    top.read("preset", c.preset);
    {
      Section a(top.child("analyzer"), "analyzer.");
      a.read("feature_dim", c.analyzer.feature_dim);
      a.read("rates", c.analyzer.rates);
      a.read("heads", c.analyzer.heads);
      a.read("codebook_size", c.analyzer.codebook_size);
      a.read("code_dim", c.analyzer.code_dim);
      a.read("model_dim", c.analyzer.model_dim);
      a.read("enc_blocks", c.analyzer.enc_blocks);
      a.read("dec_blocks", c.analyzer.dec_blocks);
      a.read_family("block", c.analyzer.block);
      a.read("attention_heads", c.analyzer.attention_heads);
      a.read("alpha", c.analyzer.alpha);
      a.read("beta", c.analyzer.beta);
      a.read("gamma", c.analyzer.gamma);
      a.read("margin", c.analyzer.margin);
      a.read("ema_decay", c.analyzer.ema_decay);
      a.read("ema_eps", c.analyzer.ema_eps);
      a.read("pad", c.analyzer.pad);
    }
    {
      Section p(top.child("predictor"), "predictor.");
      p.read("vocab_size", c.predictor.vocab_size);
      p.read("model_dim", c.predictor.model_dim);
      p.read("encoder_blocks", c.predictor.encoder_blocks);
      p.read("decoder_blocks", c.predictor.decoder_blocks);
      p.read_family("block", c.predictor.block);
      p.read("attention_heads", c.predictor.attention_heads);
      p.read("gamma", c.predictor.gamma);
      p.read("margin", c.predictor.margin);
      p.read("duration_weight", c.predictor.duration_weight);
    }
    {
      Section m(top.child("mel"), "mel.");
      m.read("sample_rate", c.mel.sample_rate);
      m.read("n_mels", c.mel.n_mels);
      m.read("frame_shift", c.mel.frame_shift);
      m.read("window_length", c.mel.window_length);
      m.read("fft_size", c.mel.fft_size);
      m.read("log_floor", c.mel.log_floor);
    }
    {
      Section t(top.child("train"), "train.");
      t.read("analyzer_iterations", c.train.analyzer_iterations);
      t.read("predictor_iterations", c.train.predictor_iterations);
      t.read("batch_size", c.train.batch_size);
      t.read("lr_start", c.train.lr_start);
      t.read("lr_end", c.train.lr_end);
      t.read("lr_hold", c.train.lr_hold);
      t.read("clip_norm", c.train.clip_norm);
      t.read("seed", c.train.seed);
      t.read("checkpoint_every", c.train.checkpoint_every);
      t.read("log_every", c.train.log_every);
    }
    {
      Section d(top.child("data"), "data.");
      std::string dir;
      d.read("directory", dir);
      if (!dir.empty()) c.data.directory = dir;
      d.read("eval_sequences", c.data.eval_sequences);
      Section s(d.child("synthetic"), "data.synthetic.");
      auto& sp = c.data.synthetic;
      s.read("n_sequences", sp.n_sequences);
      s.read("min_tokens", sp.min_tokens);
      s.read("max_tokens", sp.max_tokens);
      s.read("feature_dim", sp.feature_dim);
      s.read("vocab_size", sp.vocab_size);
      s.read("min_duration", sp.min_duration);
      s.read("max_duration", sp.max_duration);
      s.read("noise", sp.noise);
      s.read("seed", sp.seed);
    }
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return from_yaml(buf.str());
}

}  // namespace msmc
