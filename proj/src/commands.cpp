#include "msmc/commands.hpp"

#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "msmc/msmcr_file.hpp"
#include "msmc/pipeline.hpp"

namespace msmc {

namespace fs = std::filesystem;

namespace {

std::string iteration_name(const std::string& prefix, long it) {
  std::ostringstream os;
  os << prefix << "_iter" << std::setw(6) << std::setfill('0') << it << ".ckpt";
  return os.str();
}

std::ofstream open_log(const fs::path& path, bool append) {
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  out << std::setprecision(10);
  return out;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

ExperimentConfig resolve_config(const ConfigRequest& req) {
  ExperimentConfig cfg = req.config_path ? load_config(*req.config_path) : make_preset(req.preset.value_or("V3"));
  if (req.config_path && req.preset && *req.preset != cfg.preset)
    throw ConfigError("--preset " + *req.preset + " conflicts with the config file's preset " + cfg.preset);
  if (req.seed) cfg.train.seed = *req.seed;
  cfg.validate();
  return cfg;
}

Corpus training_corpus(const ExperimentConfig& cfg) {
  if (cfg.data.directory) return read_corpus(*cfg.data.directory);
  return generate_corpus(cfg.data.synthetic);
}

Corpus evaluation_corpus(const ExperimentConfig& cfg) {
  if (cfg.data.directory) return read_corpus(*cfg.data.directory);
  SyntheticCorpusSpec spec = cfg.data.synthetic;
  spec.n_sequences = cfg.data.eval_sequences;
  return generate_corpus(spec, spec.seed + 1);
}

std::vector<PredictorExample> teacher_examples(const Analyzer& analyzer, const Corpus& corpus) {
  std::vector<PredictorExample> out;
  out.reserve(corpus.items.size());
  for (const auto& item : corpus.items) out.push_back({item.text, analyzer.analyze(item.features)});
  return out;
}

void cmd_gen_corpus(const ExperimentConfig& cfg, const std::string& out_dir, std::ostream& log) {
  const Corpus c = generate_corpus(cfg.data.synthetic);
  const fs::path dir = fs::path(out_dir) / "corpus";
  write_corpus(c, dir.string());
  log << "wrote " << c.items.size() << " items to " << dir.string() << " (min envelope gap " << c.stats.min_envelope_gap
      << ", noise floor " << c.stats.noise_floor << ")\n";
}

TrainSummary cmd_train_analyzer(const ExperimentConfig& cfg, const std::string& out_dir, std::ostream& log,
                                const std::optional<std::string>& resume) {
  const auto t0 = std::chrono::steady_clock::now();
  fs::create_directories(out_dir);
  std::unique_ptr<AnalyzerTrainer> trainer;
  ExperimentConfig run_cfg = cfg;
  if (resume) {
    AnalyzerCheckpoint ck = load_analyzer_checkpoint(*resume);
    if (ck.config.analyzer.fingerprint() != cfg.analyzer.fingerprint())
      throw ConfigError("resume checkpoint was trained with a different analyzer structure");
    run_cfg = ck.config;
    trainer = std::move(ck.trainer);
  } else {
    trainer = std::make_unique<AnalyzerTrainer>(cfg.analyzer, cfg.train);
  }
  const Corpus corpus = training_corpus(run_cfg);
  std::vector<Eigen::MatrixXd> frames;
  for (const auto& item : corpus.items) frames.push_back(item.features);

  TrainSummary s;
  s.loss_log = (fs::path(out_dir) / "analyzer_loss.tsv").string();
  std::ofstream loss = open_log(s.loss_log, resume.has_value());
  if (!resume) {
    loss << "iteration\tlr\ttotal\trecon_mse";
    for (int j = 0; j < run_cfg.analyzer.stages(); ++j) loss << "\tcommit_" << j + 1;
    for (int j = 0; j + 1 < run_cfg.analyzer.stages(); ++j) loss << "\tpredict_" << j + 1;
    loss << "\n";
  }
  const long total = run_cfg.train.analyzer_iterations;
  bool first = true;
  while (trainer->iteration() < total) {
    const long it = trainer->iteration();
    const double lr = trainer->learning_rate();
    std::vector<Eigen::MatrixXd> batch;
    for (std::size_t i : trainer->next_batch(frames.size())) batch.push_back(frames[i]);
    const AnalyzerLossReport r = trainer->step(batch);
    if (first) s.first_loss = r.recon_mse;
    first = false;
    s.last_loss = r.recon_mse;
    loss << it << '\t' << lr << '\t' << r.total << '\t' << r.recon_mse;
    for (double v : r.commit_per_stage) loss << '\t' << v;
    for (double v : r.predict_per_stage) loss << '\t' << v;
    loss << '\n';
    if (run_cfg.train.log_every > 0 && it % run_cfg.train.log_every == 0)
      log << "analyzer it " << it << " lr " << lr << " total " << r.total << " recon " << r.recon_mse << "\n";
    if (run_cfg.train.checkpoint_every > 0 && trainer->iteration() % run_cfg.train.checkpoint_every == 0 &&
        trainer->iteration() < total)
      save_analyzer_checkpoint((fs::path(out_dir) / iteration_name("analyzer", trainer->iteration())).string(), run_cfg, *trainer);
    ++s.iterations;
  }
  s.checkpoint = (fs::path(out_dir) / "analyzer.ckpt").string();
  save_analyzer_checkpoint(s.checkpoint, run_cfg, *trainer);
  s.seconds = seconds_since(t0);
  log << "analyzer done: " << s.iterations << " iterations in " << s.seconds << " s -> " << s.checkpoint << "\n";
  return s;
}

TrainSummary cmd_train_predictor(const ExperimentConfig& cfg, const std::string& analyzer_ckpt, const std::string& out_dir,
                                 std::ostream& log, const std::optional<std::string>& resume) {
  const auto t0 = std::chrono::steady_clock::now();
  fs::create_directories(out_dir);
  AnalyzerCheckpoint ack = load_analyzer_checkpoint(analyzer_ckpt);
  const Analyzer& analyzer = ack.trainer->model();
  if (ack.config.analyzer.fingerprint() != cfg.analyzer.fingerprint())
    throw ConfigError("analyzer checkpoint does not match the configured analyzer structure");
  const std::uint64_t hash = analyzer_hash(analyzer);

  std::unique_ptr<PredictorTrainer> trainer;
  ExperimentConfig run_cfg = cfg;
  if (resume) {
    PredictorCheckpoint pk = load_predictor_checkpoint(*resume);
    if (pk.trainer->model().analyzer_hash() != hash)
      throw ConfigError("resume checkpoint was trained against a different analyzer");
    run_cfg = pk.config;
    trainer = std::move(pk.trainer);
  } else {
    trainer = std::make_unique<PredictorTrainer>(cfg.analyzer, cfg.predictor, cfg.train, analyzer.codebooks(), hash);
  }
  const Corpus corpus = training_corpus(run_cfg);
  const std::vector<PredictorExample> examples = teacher_examples(analyzer, corpus);

  TrainSummary s;
  s.loss_log = (fs::path(out_dir) / "predictor_loss.tsv").string();
  std::ofstream loss = open_log(s.loss_log, resume.has_value());
  if (!resume) loss << "iteration\tlr\ttotal\tmse\ttriplet\tduration\n";
  const long total = run_cfg.train.predictor_iterations;
  bool first = true;
  while (trainer->iteration() < total) {
    const long it = trainer->iteration();
    const double lr = trainer->learning_rate();
    std::vector<const PredictorExample*> batch;
    for (std::size_t i : trainer->next_batch(examples.size())) batch.push_back(&examples[i]);
    const PredictorLossReport r = trainer->step(batch);
    if (first) s.first_loss = r.total;
    first = false;
    s.last_loss = r.total;
    loss << it << '\t' << lr << '\t' << r.total << '\t' << r.mse << '\t' << r.triplet << '\t' << r.duration << '\n';
    if (run_cfg.train.log_every > 0 && it % run_cfg.train.log_every == 0)
      log << "predictor it " << it << " lr " << lr << " total " << r.total << " mse " << r.mse << " tpl " << r.triplet << "\n";
    if (run_cfg.train.checkpoint_every > 0 && trainer->iteration() % run_cfg.train.checkpoint_every == 0 &&
        trainer->iteration() < total)
      save_predictor_checkpoint((fs::path(out_dir) / iteration_name("predictor", trainer->iteration())).string(), run_cfg, *trainer);
    ++s.iterations;
  }
  s.checkpoint = (fs::path(out_dir) / "predictor.ckpt").string();
  save_predictor_checkpoint(s.checkpoint, run_cfg, *trainer);
  s.seconds = seconds_since(t0);
  log << "predictor done: " << s.iterations << " iterations in " << s.seconds << " s -> " << s.checkpoint << "\n";
  return s;
}

std::vector<std::string> cmd_analyze(const std::string& analyzer_ckpt, const std::string& corpus_dir,
                                     const std::string& out_dir, std::ostream& log) {
  const AnalyzerCheckpoint ck = load_analyzer_checkpoint(analyzer_ckpt);
  const Corpus corpus = read_corpus(corpus_dir);
  if (corpus.spec.feature_dim != ck.config.analyzer.feature_dim)
    throw ConfigError("corpus feature dimension does not match the analyzer");
  fs::create_directories(out_dir);
  std::vector<std::string> paths;
  for (std::size_t n = 0; n < corpus.items.size(); ++n) {
    const Msmcr m = ck.trainer->model().analyze(corpus.items[n].features);
    std::ostringstream name;
    name << "item_" << std::setw(4) << std::setfill('0') << n << ".msmcr";
    const std::string path = (fs::path(out_dir) / name.str()).string();
    write_bytes(path, msmcr_pack(m));
    paths.push_back(path);
  }
  log << "analyzed " << paths.size() << " items into " << out_dir << "\n";
  return paths;
}

SynthesisOutputs cmd_synthesize(const std::string& predictor_ckpt, const std::string& analyzer_ckpt,
                                const std::string& text_file, const std::string& out_dir, std::ostream& log,
                                const std::string& decoder) {
  const AnalyzerCheckpoint ack = load_analyzer_checkpoint(analyzer_ckpt);
  const PredictorCheckpoint pk = load_predictor_checkpoint(predictor_ckpt);
  const Analyzer& analyzer = ack.trainer->model();
  const Predictor& predictor = pk.trainer->model();
  if (pk.config.analyzer.fingerprint() != ack.config.analyzer.fingerprint() || predictor.analyzer_hash() != analyzer_hash(analyzer))
    throw ConfigError("predictor checkpoint was trained against a different analyzer");
  const std::vector<int> tokens = read_token_file(text_file);

  const Msmcr m = predictor.synthesize(tokens);
  const std::vector<std::uint8_t> packed = msmcr_pack(m);
  const Msmcr check = msmcr_unpack(packed, analyzer.codebooks(), ack.config.analyzer.fingerprint());
  check.validate(&analyzer.codebooks());

  fs::create_directories(out_dir);
  const std::string stem = fs::path(text_file).stem().string();
  SynthesisOutputs out;
  out.msmcr_file = (fs::path(out_dir) / (stem + ".msmcr")).string();
  out.features_file = (fs::path(out_dir) / (stem + ".features.json")).string();
  out.wav_file = (fs::path(out_dir) / (stem + ".wav")).string();
  write_bytes(out.msmcr_file, packed);

  const Eigen::MatrixXd features = assemble_vocoder_input(m);
  nlohmann::json fj = {{"rows", features.rows()}, {"cols", features.cols()}, {"data", nlohmann::json::array()}};
  for (Eigen::Index r = 0; r < features.rows(); ++r) {
    std::vector<double> row;
    for (Eigen::Index c = 0; c < features.cols(); ++c) row.push_back(features(r, c));
    fj["data"].push_back(std::move(row));
  }
  std::ofstream(out.features_file) << fj.dump() << "\n";

  // The stub decoder consumes log-mel, so the analyzer decoder maps the MSMCR back to frames first.
  const Eigen::MatrixXd mel = analyzer.reconstruct(m);
  const DecoderRegistry registry = DecoderRegistry::with_defaults();
  const Eigen::VectorXd wave = decode_waveform(mel, registry, decoder, ack.config.mel);
  write_wav(out.wav_file, wave, ack.config.mel.sample_rate);
  log << "synthesized " << tokens.size() << " tokens -> " << m.length() << " frames: " << out.msmcr_file << "\n";
  return out;
}

RepresentationReport cmd_report(const std::string& analyzer_ckpt, const std::optional<std::string>& eval_dir,
                                const std::string& out_dir, std::ostream& log) {
  const AnalyzerCheckpoint ck = load_analyzer_checkpoint(analyzer_ckpt);
  const Corpus eval = eval_dir ? read_corpus(*eval_dir) : evaluation_corpus(ck.config);
  if (eval.spec.feature_dim != ck.config.analyzer.feature_dim)
    throw ConfigError("evaluation corpus feature dimension does not match the analyzer");
  std::vector<Eigen::MatrixXd> frames;
  for (const auto& item : eval.items) frames.push_back(item.features);
  const RepresentationReport r = representation_report(ck.config.preset, ck.trainer->model(), frames);
  fs::create_directories(out_dir);
  std::ofstream(fs::path(out_dir) / "report.txt") << r.table();
  std::ofstream(fs::path(out_dir) / "report.kv") << r.key_values();
  log << r.table();
  return r;
}

}  // namespace msmc
