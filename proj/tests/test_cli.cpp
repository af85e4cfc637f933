#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "msmc/config.hpp"
#include "toys.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "msmc_cli_test";

int run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " + MSMC_CLI_PATH + " " + args + " >>" + (kRoot / "cli.log").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string write_config(const std::string& name, const msmc::ExperimentConfig& cfg) {
  const fs::path p = kRoot / name;
  std::ofstream(p) << msmc::to_yaml(cfg);
  return p.string();
}

}  // namespace

TEST_CASE("command line: full toy workflow, determinism and exit codes") {
  fs::remove_all(kRoot);
  fs::create_directories(kRoot);
  const std::string cfg = write_config("toy.yaml", toy::experiment(4));
  const std::string out = (kRoot / "run").string();

  REQUIRE(run("gen-corpus --config " + cfg + " --out " + out) == 0);
  CHECK(fs::exists(kRoot / "run/corpus/corpus.json"));
  REQUIRE(run("train-analyzer --config " + cfg + " --out " + out) == 0);
  REQUIRE(run("train-predictor --config " + cfg + " --analyzer " + out + "/analyzer.ckpt --out " + out) == 0);
  CHECK(fs::exists(kRoot / "run/analyzer_loss.tsv"));
  CHECK(fs::exists(kRoot / "run/predictor_loss.tsv"));
  REQUIRE(run("analyze --analyzer " + out + "/analyzer.ckpt --corpus " + out + "/corpus --out " + out + "/msmcr") == 0);
  CHECK(fs::exists(kRoot / "run/msmcr/item_0000.msmcr"));

  std::ofstream(kRoot / "text.txt") << "0 3 1 4\n";
  const std::string synth = "synthesize --predictor " + out + "/predictor.ckpt --analyzer " + out +
                            "/analyzer.ckpt --text " + (kRoot / "text.txt").string();
  REQUIRE(run(synth + " --out " + out + "/s1") == 0);
  REQUIRE(run(synth + " --out " + out + "/s2") == 0);
  for (const std::string f : {"text.msmcr", "text.features.json", "text.wav"}) {
    CAPTURE(f);
    const std::string a = slurp(kRoot / "run/s1" / f);
    CHECK(!a.empty());
    CHECK(a == slurp(kRoot / "run/s2" / f));
  }

  REQUIRE(run("report --analyzer " + out + "/analyzer.ckpt --out " + out + "/r1") == 0);
  REQUIRE(run("report --analyzer " + out + "/analyzer.ckpt --out " + out + "/r2") == 0);
  CHECK(slurp(kRoot / "run/r1/report.kv") == slurp(kRoot / "run/r2/report.kv"));
  CHECK(slurp(kRoot / "run/r1/report.txt").find("CR") != std::string::npos);

  // Relative output directories land under the output root.
  REQUIRE(run("gen-corpus --config " + cfg + " --out rel", "MSMC_OUT_ROOT=" + (kRoot / "root").string()) == 0);
  CHECK(fs::exists(kRoot / "root/rel/corpus/corpus.json"));

  SUBCASE("config errors exit 2") {
    CHECK(run("train-analyzer --preset V9 --out " + out) == 2);
    CHECK(run("train-analyzer --config " + cfg + " --preset V1 --out " + out) == 2);
    std::ofstream(kRoot / "typo.yaml") << "analyzer:\n  hedas: 2\n";
    CHECK(run("train-analyzer --config " + (kRoot / "typo.yaml").string() + " --out " + out) == 2);
    CHECK(run("synthesize --analyzer " + out + "/analyzer.ckpt --text " + (kRoot / "text.txt").string()) == 2);
    CHECK(run("no-such-command") == 2);
    CHECK(run("--help") == 0);
  }
  SUBCASE("divergence exits 3") {
    msmc::ExperimentConfig bad = toy::experiment(4);
    bad.train.lr_start = bad.train.lr_end = 1e300;
    bad.train.clip_norm = 0.0;
    CHECK(run("train-analyzer --config " + write_config("bad.yaml", bad) + " --out " + out + "/bad") == 3);
  }
  SUBCASE("bad input exits 1") {
    std::ofstream(kRoot / "empty.txt") << "\n";
    CHECK(run(synth.substr(0, synth.find("--text")) + "--text " + (kRoot / "empty.txt").string() + " --out " + out) == 1);
  }
}
