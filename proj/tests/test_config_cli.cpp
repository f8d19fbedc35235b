#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "spda/config.hpp"
#include "spda/segnet.hpp"

using namespace spda;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("spda_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string cli_bin() {
  const char* env = std::getenv("SPDA_CLI_BIN");
  REQUIRE_MESSAGE(env != nullptr, "SPDA_CLI_BIN must point at the spda binary");
  return env;
}

int run_cli(const std::string& args) {
  const std::string cmd = cli_bin() + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  return WEXITSTATUS(status);
}

std::vector<char> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

bool same_file_bytes(const fs::path& a, const fs::path& b) { return read_bytes(a) == read_bytes(b); }

}  // namespace

TEST_CASE("config file values load and command semantics reject unknown keys") {
  const fs::path dir = scratch_dir("config");
  const fs::path ini = dir / "run.ini";
  std::ofstream(ini) << "seed = 99\n"
                        "[network]\n"
                        "attention = soa\n"
                        "channels = 4, 8, 16\n"
                        "epsilon = 1e-3\n"
                        "[train]\n"
                        "epochs = 7\n"
                        "rmsprop_lr = 2e-3\n"
                        "[eval]\n"
                        "size_mode = fixed\n";
  RunConfig cfg;
  cfg.load_ini(ini.string());
  CHECK(cfg.seed == 99);
  CHECK(cfg.attention == "soa");
  CHECK(cfg.channels == std::vector<int>{4, 8, 16});
  CHECK(cfg.epsilon == 1e-3);
  CHECK(cfg.epochs == 7);
  CHECK(cfg.rmsprop_lr == 2e-3);
  CHECK(cfg.size_mode == "fixed");

  std::ofstream(ini) << "[network]\nbogus_key = 1\n";
  RunConfig cfg2;
  CHECK_THROWS_AS(cfg2.load_ini(ini.string()), ConfigError);

  std::ofstream(ini) << "[train]\nepochs = not_a_number\n";
  RunConfig cfg3;
  CHECK_THROWS_AS(cfg3.load_ini(ini.string()), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("strict-paper mode flips the documented toggles") {
  RunConfig cfg;
  CHECK(cfg.inner_relu);
  CHECK(cfg.isometric_vec);
  cfg.apply_strict_paper();
  CHECK(cfg.strict_paper);
  CHECK(!cfg.inner_relu);
  CHECK(!cfg.isometric_vec);
  CHECK(cfg.size_mode == "fixed");
}

TEST_CASE("config echo serializes every section") {
  RunConfig cfg;
  cfg.seed = 7;
  const auto j = nlohmann::json::parse(cfg.to_json());
  CHECK(j.at("seed").get<uint64_t>() == 7);
  CHECK(j.contains("network"));
  CHECK(j.contains("train"));
  CHECK(j.contains("synth"));
  CHECK(j.contains("eval"));
  CHECK(j.at("tool").at("name") == "spda");
}

TEST_CASE("cli: synth runs are byte-identical for the same seed") {
  const fs::path dir = scratch_dir("synth_det");
  const std::string common = "synth --cases 3 --shape 16,16,16 --seed 21 --out ";
  CHECK(run_cli(common + (dir / "a").string()) == 0);
  CHECK(run_cli(common + (dir / "b").string()) == 0);
  for (int i = 0; i < 3; ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), "cases/case_%05d.spda", i);
    CHECK(same_file_bytes(dir / "a" / name, dir / "b" / name));
  }
  CHECK(same_file_bytes(dir / "a" / "manifest.json", dir / "b" / "manifest.json"));
  fs::remove_all(dir);
}

TEST_CASE("cli: prevalence zero marks every manifest label false") {
  const fs::path dir = scratch_dir("synth_prev0");
  CHECK(run_cli("synth --cases 3 --prevalence 0 --seed 4 --out " + (dir / "ds").string()) == 0);
  std::ifstream in(dir / "ds" / "manifest.json");
  nlohmann::json manifest;
  in >> manifest;
  for (const auto& c : manifest.at("cases")) CHECK(c.at("label").get<bool>() == false);
  fs::remove_all(dir);
}

TEST_CASE("cli: usage errors exit with code 1") {
  const fs::path dir = scratch_dir("usage");
  CHECK(run_cli("synth --cases 2 --mix 0.5,0.2,0.2 --out " + (dir / "x").string()) == 1);
  CHECK(run_cli("bogus-subcommand") == 1);
  CHECK(run_cli("synth") == 1);  // missing required --out
  CHECK(run_cli("eval --dataset /nonexistent --checkpoint /nonexistent --out " +
                (dir / "y").string()) == 2);
  fs::remove_all(dir);
}

TEST_CASE("cli: training for zero epochs reproduces the seeded initialization") {
  const fs::path dir = scratch_dir("train0");
  CHECK(run_cli("synth --cases 2 --seed 3 --out " + (dir / "ds").string()) == 0);
  CHECK(run_cli("train --dataset " + (dir / "ds").string() + " --out " + (dir / "run").string() +
                " --epochs 0 --seed 17 --attention soga --quiet") == 0);

  SegModel trained = SegModel::load_checkpoint((dir / "run" / "checkpoint.spdc").string());
  UNetConfig net;
  net.attention.variant = AttentionVariant::kSoga;
  SegModel fresh(net, 17);
  auto a = trained.params();
  auto b = fresh.params();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    auto av = a[i].tensor.values();
    auto bv = b[i].tensor.values();
    for (size_t k = 0; k < av.size(); ++k) CHECK(av[k] == bv[k]);
  }
  fs::remove_all(dir);
}

TEST_CASE("cli: identical train and eval runs produce identical artifacts") {
  const fs::path dir = scratch_dir("determinism");
  CHECK(run_cli("synth --cases 4 --seed 5 --out " + (dir / "ds").string()) == 0);
  const std::string train_args = "train --dataset " + (dir / "ds").string() +
                                 " --epochs 2 --seed 9 --attention soga --quiet --out ";
  CHECK(run_cli(train_args + (dir / "r1").string()) == 0);
  CHECK(run_cli(train_args + (dir / "r2").string()) == 0);
  CHECK(same_file_bytes(dir / "r1" / "checkpoint.spdc", dir / "r2" / "checkpoint.spdc"));
  CHECK(same_file_bytes(dir / "r1" / "train_log.jsonl", dir / "r2" / "train_log.jsonl"));

  const std::string eval_args = "eval --dataset " + (dir / "ds").string() + " --checkpoint " +
                                (dir / "r1" / "checkpoint.spdc").string() + " --out ";
  CHECK(run_cli(eval_args + (dir / "e1").string()) == 0);
  CHECK(run_cli(eval_args + (dir / "e2").string()) == 0);
  for (const char* f : {"metrics.json", "pr_curve.csv", "froc_curve.csv"}) {
    CHECK(same_file_bytes(dir / "e1" / f, dir / "e2" / f));
  }

  // Provenance: the metrics document embeds tool, seed, and the full config.
  nlohmann::json metrics;
  std::ifstream(dir / "e1" / "metrics.json") >> metrics;
  CHECK(metrics.at("tool").at("name") == "spda");
  CHECK(metrics.contains("seed"));
  CHECK(metrics.at("config").contains("network"));
  fs::remove_all(dir);
}

TEST_CASE("cli: gradcheck passes and the fault injection is caught") {
  CHECK(run_cli("gradcheck --seed 12") == 0);
  CHECK(run_cli("gradcheck --seed 12 --inject-wrong-sign conv3d") == 2);
}
