#include "msmc/checkpoint.hpp"

#include <json.hpp>

#include <sstream>

#include "msmc/msmcr_file.hpp"

namespace msmc {

namespace {

using nlohmann::json;

json matrix_to_json(const Eigen::MatrixXd& m) {
  std::vector<double> data(static_cast<std::size_t>(m.size()));
  Eigen::Map<Eigen::MatrixXd>(data.data(), m.rows(), m.cols()) = m;
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw InputError("checkpoint matrix has the wrong element count");
  return Eigen::Map<const Eigen::MatrixXd>(data.data(), rows, cols);
}

json params_to_json(const nn::ParameterStore& store) {
  json out = json::array();
  for (const auto& p : store.all()) {
    json e = matrix_to_json(p->value);
    e["name"] = p->name;
    out.push_back(std::move(e));
  }
  return out;
}

void params_from_json(const json& j, nn::ParameterStore& store) {
  if (j.size() != store.size()) throw ConfigError("checkpoint parameter count does not match the model");
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& p = *store.all()[i];
    if (j[i].at("name").get<std::string>() != p.name) throw ConfigError("checkpoint parameter '" + p.name + "' is missing");
    Eigen::MatrixXd v = matrix_from_json(j[i]);
    if (v.rows() != p.value.rows() || v.cols() != p.value.cols())
      throw ConfigError("checkpoint parameter '" + p.name + "' has the wrong shape");
    p.value = std::move(v);
  }
}

json adam_to_json(const nn::Adam& adam) {
  json m = json::array();
  json v = json::array();
  for (const auto& x : adam.state().m) m.push_back(matrix_to_json(x));
  for (const auto& x : adam.state().v) v.push_back(matrix_to_json(x));
  return {{"step", adam.state().step}, {"m", std::move(m)}, {"v", std::move(v)}};
}

void adam_from_json(const json& j, nn::Adam& adam) {
  auto& st = adam.state();
  if (j.at("m").size() != st.m.size() || j.at("v").size() != st.v.size())
    throw ConfigError("checkpoint optimizer state does not match the model");
  st.step = j.at("step").get<long>();
  for (std::size_t i = 0; i < st.m.size(); ++i) {
    st.m[i] = matrix_from_json(j["m"][i]);
    st.v[i] = matrix_from_json(j["v"][i]);
  }
}

json codebooks_to_json(const Codebooks& cbs) {
  json out = json::array();
  for (const auto& mcb : cbs) {
    json heads = json::array();
    for (const auto& cb : mcb.heads)
      heads.push_back({{"M", cb.size()},
                       {"dim", cb.dim()},
                       {"decay", cb.decay},
                       {"smoothing_eps", cb.smoothing_eps},
                       {"codes", matrix_to_json(cb.codes)},
                       {"ema_count", matrix_to_json(cb.ema_count)},
                       {"ema_sum", matrix_to_json(cb.ema_sum)}});
    out.push_back(std::move(heads));
  }
  return out;
}

Codebooks codebooks_from_json(const json& j) {
  Codebooks out;
  for (const auto& stage : j) {
    MultiHeadCodebook<double> mcb;
    for (const auto& h : stage) {
      Codebook<double> cb;
      cb.decay = h.at("decay").get<double>();
      cb.smoothing_eps = h.at("smoothing_eps").get<double>();
      cb.codes = matrix_from_json(h.at("codes"));
      cb.ema_count = matrix_from_json(h.at("ema_count"));
      cb.ema_sum = matrix_from_json(h.at("ema_sum"));
      if (cb.size() != h.at("M").get<Eigen::Index>() || cb.dim() != h.at("dim").get<Eigen::Index>())
        throw InputError("checkpoint codebook header disagrees with its data");
      cb.validate();
      mcb.heads.push_back(std::move(cb));
    }
    mcb.validate();
    out.push_back(std::move(mcb));
  }
  return out;
}

template <typename Rng>
std::string rng_to_string(const Rng& r) {
  std::ostringstream os;
  os << r;
  return os.str();
}

template <typename Rng>
void rng_from_string(const std::string& s, Rng& r) {
  std::istringstream is(s);
  is >> r;
  if (!is) throw InputError("checkpoint RNG state is unreadable");
}

void write_checkpoint(const std::string& path, const json& j) {
  const std::vector<std::uint8_t> bytes = json::to_cbor(j);
  write_bytes(path, bytes);
}

json read_checkpoint(const std::string& path, const std::string& kind) {
  const std::vector<std::uint8_t> bytes = read_bytes(path);
  json j;
  try {
    j = json::from_cbor(bytes);
  } catch (const json::exception&) {
    throw InputError("'" + path + "' is not a checkpoint");
  }
  if (!j.is_object() || j.value("kind", std::string()) != kind)
    throw ConfigError("'" + path + "' is not a " + kind + " checkpoint");
  if (j.value("version", 0) != kCheckpointVersion) throw ConfigError("unsupported checkpoint version in '" + path + "'");
  return j;
}

}  // namespace

std::uint64_t analyzer_hash(const Analyzer& a) {
  const json j = {{"fingerprint", a.config().fingerprint()},
                  {"params", params_to_json(a.parameters())},
                  {"codebooks", codebooks_to_json(a.codebooks())}};
  const std::vector<std::uint8_t> bytes = json::to_cbor(j);
  return fnv1a(bytes.data(), bytes.size());
}

void save_analyzer_checkpoint(const std::string& path, const ExperimentConfig& cfg, const AnalyzerTrainer& trainer) {
  const Analyzer& a = trainer.model();
  if (!(a.config() == cfg.analyzer)) throw ContractViolation("checkpoint config does not describe the trained analyzer");
  const json j = {{"kind", "analyzer"},
                  {"version", kCheckpointVersion},
                  {"config", to_yaml(cfg)},
                  {"fingerprint", cfg.analyzer.fingerprint()},
                  {"iteration", trainer.iteration()},
                  {"rng", rng_to_string(trainer.rng())},
                  {"params", params_to_json(a.parameters())},
                  {"adam", adam_to_json(trainer.optimizer())},
                  {"codebooks", codebooks_to_json(a.codebooks())}};
  write_checkpoint(path, j);
}

AnalyzerCheckpoint load_analyzer_checkpoint(const std::string& path) {
  const json j = read_checkpoint(path, "analyzer");
  AnalyzerCheckpoint ck;
  try {
    ck.config = from_yaml(j.at("config").get<std::string>());
    if (ck.config.analyzer.fingerprint() != j.at("fingerprint").get<std::uint64_t>())
      throw ConfigError("analyzer checkpoint fingerprint does not match its config");
    ck.trainer = std::make_unique<AnalyzerTrainer>(ck.config.analyzer, ck.config.train);
    params_from_json(j.at("params"), ck.trainer->model().parameters());
    adam_from_json(j.at("adam"), ck.trainer->optimizer());
    Codebooks cbs = codebooks_from_json(j.at("codebooks"));
    if (cbs.size() != ck.trainer->model().codebooks().size()) throw ConfigError("checkpoint codebooks do not match the config");
    for (std::size_t s = 0; s < cbs.size(); ++s) {
      const auto& want = ck.trainer->model().codebooks()[s];
      if (cbs[s].head_count() != want.head_count() || cbs[s].size() != want.size() || cbs[s].head_dim() != want.head_dim())
        throw ConfigError("checkpoint codebooks do not match the config");
    }
    ck.trainer->model().codebooks() = std::move(cbs);
    ck.trainer->set_iteration(j.at("iteration").get<long>());
    rng_from_string(j.at("rng").get<std::string>(), ck.trainer->rng());
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed analyzer checkpoint: ") + e.what());
  }
  return ck;
}

void save_predictor_checkpoint(const std::string& path, const ExperimentConfig& cfg, const PredictorTrainer& trainer) {
  const Predictor& p = trainer.model();
  const json j = {{"kind", "predictor"},
                  {"version", kCheckpointVersion},
                  {"config", to_yaml(cfg)},
                  {"fingerprint", cfg.analyzer.fingerprint()},
                  {"analyzer_hash", p.analyzer_hash()},
                  {"iteration", trainer.iteration()},
                  {"rng", rng_to_string(trainer.rng())},
                  {"params", params_to_json(p.parameters())},
                  {"adam", adam_to_json(trainer.optimizer())},
                  {"codebooks", codebooks_to_json(p.codebooks())}};
  write_checkpoint(path, j);
}

PredictorCheckpoint load_predictor_checkpoint(const std::string& path) {
  const json j = read_checkpoint(path, "predictor");
  PredictorCheckpoint ck;
  try {
    ck.config = from_yaml(j.at("config").get<std::string>());
    if (ck.config.analyzer.fingerprint() != j.at("fingerprint").get<std::uint64_t>())
      throw ConfigError("predictor checkpoint fingerprint does not match its config");
    Codebooks cbs = codebooks_from_json(j.at("codebooks"));
    ck.trainer = std::make_unique<PredictorTrainer>(ck.config.analyzer, ck.config.predictor, ck.config.train, std::move(cbs),
                                                    j.at("analyzer_hash").get<std::uint64_t>());
    params_from_json(j.at("params"), ck.trainer->model().parameters());
    adam_from_json(j.at("adam"), ck.trainer->optimizer());
    ck.trainer->set_iteration(j.at("iteration").get<long>());
    rng_from_string(j.at("rng").get<std::string>(), ck.trainer->rng());
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed predictor checkpoint: ") + e.what());
  }
  return ck;
}

}  // namespace msmc
