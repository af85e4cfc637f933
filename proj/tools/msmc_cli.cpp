// msmc: command-line front end.
//
// Exit codes: 0 ok, 1 input/runtime error, 2 config or usage error, 3 divergence.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "msmc/commands.hpp"

namespace {

struct Common {
  std::string config;
  std::string preset;
  std::uint64_t seed = 0;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool with_config = true) {
  if (with_config) {
    cmd->add_option("--config", c.config, "Experiment config (YAML)")->check(CLI::ExistingFile);
    cmd->add_option("--preset", c.preset, "Preset name")->check(CLI::IsMember(msmc::preset_names()));
    cmd->add_option("--seed", c.seed, "Override the training seed");
  }
  cmd->add_option("--out", c.out, "Output directory (relative paths resolve under $MSMC_OUT_ROOT)");
}

msmc::ConfigRequest request(const Common& c, const CLI::App* cmd) {
  msmc::ConfigRequest r;
  if (!c.config.empty()) r.config_path = c.config;
  if (!c.preset.empty()) r.preset = c.preset;
  if (cmd->count("--seed") > 0) r.seed = c.seed;
  return r;
}

std::string out_dir(const Common& c, const std::string& fallback) {
  std::filesystem::path p = c.out.empty() ? fallback : c.out;
  if (p.is_relative()) {
    if (const char* root = std::getenv("MSMC_OUT_ROOT"); root != nullptr && *root != '\0') p = std::filesystem::path(root) / p;
  }
  return p.string();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-stage multi-codebook speech representation toolkit"};
  app.require_subcommand(1);

  Common gen_c, ta_c, tp_c, an_c, sy_c, rp_c;
  std::string resume, analyzer_ckpt, predictor_ckpt, corpus_dir, text_file, eval_dir, decoder = "griffin-lim";

  auto* gen = app.add_subcommand("gen-corpus", "Write the synthetic corpus described by the config");
  add_common(gen, gen_c);

  auto* ta = app.add_subcommand("train-analyzer", "Train the multi-stage VQ analyzer");
  add_common(ta, ta_c);
  ta->add_option("--resume", resume, "Continue from an analyzer checkpoint")->check(CLI::ExistingFile);

  auto* tp = app.add_subcommand("train-predictor", "Train the multi-stage predictor against a trained analyzer");
  add_common(tp, tp_c);
  tp->add_option("--analyzer", analyzer_ckpt, "Analyzer checkpoint")->required()->check(CLI::ExistingFile);
  tp->add_option("--resume", resume, "Continue from a predictor checkpoint")->check(CLI::ExistingFile);

  auto* an = app.add_subcommand("analyze", "Encode a corpus directory into MSMCR files");
  add_common(an, an_c, false);
  an->add_option("--analyzer", analyzer_ckpt, "Analyzer checkpoint")->required()->check(CLI::ExistingFile);
  an->add_option("--corpus", corpus_dir, "Corpus directory")->required()->check(CLI::ExistingDirectory);

  auto* sy = app.add_subcommand("synthesize", "Text tokens to MSMCR file, vocoder features and stub waveform");
  add_common(sy, sy_c, false);
  sy->add_option("--predictor", predictor_ckpt, "Predictor checkpoint")->required()->check(CLI::ExistingFile);
  sy->add_option("--analyzer", analyzer_ckpt, "Analyzer checkpoint")->required()->check(CLI::ExistingFile);
  sy->add_option("--text", text_file, "Whitespace-separated token ids")->required()->check(CLI::ExistingFile);
  sy->add_option("--decoder", decoder, "Registered waveform decoder");

  auto* rp = app.add_subcommand("report", "Compression, distortion and codebook usage of a trained analyzer");
  add_common(rp, rp_c, false);
  rp->add_option("--analyzer", analyzer_ckpt, "Analyzer checkpoint")->required()->check(CLI::ExistingFile);
  rp->add_option("--eval", eval_dir, "Evaluation corpus directory (default: held-out synthetic items)")
      ->check(CLI::ExistingDirectory);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Help keeps CLI11's exit status; every other usage mistake is a config error.
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) {
      msmc::cmd_gen_corpus(msmc::resolve_config(request(gen_c, gen)), out_dir(gen_c, "out"), std::cout);
    } else if (ta->parsed()) {
      std::optional<std::string> r;
      if (!resume.empty()) r = resume;
      msmc::cmd_train_analyzer(msmc::resolve_config(request(ta_c, ta)), out_dir(ta_c, "out"), std::cout, r);
    } else if (tp->parsed()) {
      std::optional<std::string> r;
      if (!resume.empty()) r = resume;
      msmc::cmd_train_predictor(msmc::resolve_config(request(tp_c, tp)), analyzer_ckpt, out_dir(tp_c, "out"), std::cout, r);
    } else if (an->parsed()) {
      msmc::cmd_analyze(analyzer_ckpt, corpus_dir, out_dir(an_c, "out/msmcr"), std::cout);
    } else if (sy->parsed()) {
      msmc::cmd_synthesize(predictor_ckpt, analyzer_ckpt, text_file, out_dir(sy_c, "out/synth"), std::cout, decoder);
    } else if (rp->parsed()) {
      std::optional<std::string> e;
      if (!eval_dir.empty()) e = eval_dir;
      msmc::cmd_report(analyzer_ckpt, e, out_dir(rp_c, "out/report"), std::cout);
    }
  } catch (const msmc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const msmc::DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
