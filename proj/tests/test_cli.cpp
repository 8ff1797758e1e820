#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "advedge/checkpoint.hpp"
#include "advedge/dataset.hpp"

using namespace advedge;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int exit_code;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

CliResult run_cli(const std::string& args, const fs::path& scratch) {
  const fs::path out = scratch / "stdout.txt";
  const fs::path err = scratch / "stderr.txt";
  const std::string cmd =
      std::string(ADVEDGE_CLI_PATH) + " " + args + " > " + out.string() + " 2> " + err.string();
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

}  // namespace

TEST_CASE("cli end-to-end walk: synth, train, attack, report") {
  const fs::path base = fs::temp_directory_path() / "advedge_cli_e2e";
  fs::remove_all(base);
  fs::create_directories(base);

  // synth
  CliResult synth = run_cli("synth --out " + (base / "data").string() + " --count 120 --seed 9", base);
  REQUIRE(synth.exit_code == 0);
  CHECK(fs::exists(base / "data" / "0_synth0.png"));

  // train twice with the same seed: identical checkpoints
  const std::string train_args = "train --spec conv3 --data " + (base / "data").string() + " --out " +
                                 (base / "src.aebm").string() + " --seed 4 --epochs 1";
  REQUIRE(run_cli(train_args, base).exit_code == 0);
  const std::string first = slurp(base / "src.aebm");
  REQUIRE(run_cli(train_args, base).exit_code == 0);
  CHECK(slurp(base / "src.aebm") == first);

  const std::string train_tgt = "train --spec conv4 --data " + (base / "data").string() + " --out " +
                                (base / "tgt.aebm").string() + " --seed 5 --epochs 1";
  REQUIRE(run_cli(train_tgt, base).exit_code == 0);

  // attack from a config file
  {
    std::ofstream cfg(base / "attack.cfg");
    cfg << "dataset_path=" << (base / "data").string() << "\n"
        << "source_checkpoint=" << (base / "src.aebm").string() << "\n"
        << "target_checkpoint=" << (base / "tgt.aebm").string() << "\n"
        << "output_dir=" << (base / "out").string() << "\n"
        << "eval_size=2\n"
        << "accuracy_floor=0\n"
        << "iterations=4\n"
        << "query_cap=100\n"
        << "seed=3\n";
  }
  CliResult attack = run_cli("attack --config " + (base / "attack.cfg").string(), base);
  REQUIRE(attack.exit_code == 0);
  REQUIRE(fs::exists(base / "out" / "summary.csv"));

  // report reproduces the summary byte for byte
  const std::string summary_before = slurp(base / "out" / "summary.csv");
  fs::remove(base / "out" / "summary.csv");
  CliResult report = run_cli("report --in " + (base / "out").string(), base);
  REQUIRE(report.exit_code == 0);
  CHECK(slurp(base / "out" / "summary.csv") == summary_before);

  fs::remove_all(base);
}

TEST_CASE("cli error paths") {
  const fs::path base = fs::temp_directory_path() / "advedge_cli_err";
  fs::remove_all(base);
  fs::create_directories(base);

  SECTION("missing checkpoint is a clear error naming the path") {
    save_png_dir(make_synthetic_dataset(4, 1), (base / "data").string());
    std::ofstream cfg(base / "bad.cfg");
    cfg << "dataset_path=" << (base / "data").string() << "\n"
        << "source_checkpoint=" << (base / "missing.aebm").string() << "\n"
        << "target_checkpoint=" << (base / "missing.aebm").string() << "\n"
        << "output_dir=" << (base / "out").string() << "\n";
    cfg.close();
    CliResult r = run_cli("attack --config " + (base / "bad.cfg").string(), base);
    CHECK(r.exit_code != 0);
    CHECK(r.err.find("missing.aebm") != std::string::npos);
  }

  SECTION("unknown flags are a usage error") {
    CliResult r = run_cli("train --no-such-flag 1", base);
    CHECK(r.exit_code != 0);
  }

  SECTION("unknown subcommand is a usage error") {
    CliResult r = run_cli("frobnicate", base);
    CHECK(r.exit_code != 0);
  }

  fs::remove_all(base);
}
