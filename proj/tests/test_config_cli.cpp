#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "catch_amalgamated.hpp"
#include "mcan/ablation.hpp"
#include "mcan/config.hpp"
#include "mcan/synth.hpp"
#include "mcan/train.hpp"

using namespace mcan;
namespace fs = std::filesystem;

namespace {

struct CmdResult {
  int exit_code;
  std::string out;
};

// Run the installed binary, capture stdout+stderr.
CmdResult run_cli(const std::string& args) {
  const std::string cmd = std::string(MCAN_CLI_PATH) + " " + args + " 2>&1";
  std::array<char, 4096> buf;
  std::string out;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  while (std::fgets(buf.data(), int(buf.size()), pipe)) out += buf.data();
  const int status = pclose(pipe);
  return {WEXITSTATUS(status), out};
}

fs::path scratch_dir() {
  const fs::path dir = fs::temp_directory_path() / "mcan_cli_tests";
  fs::create_directories(dir);
  return dir;
}

std::string write_file(const fs::path& path, const std::string& content) {
  std::ofstream(path) << content;
  return path.string();
}

std::string slurp(const fs::path& path) {
  std::ifstream is(path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Small model/data settings so CLI train runs finish in milliseconds.
const char* kTinyJson = R"({
  "model": {"d": 6, "d_t_raw": 5, "d_v_raw": 4, "d_a_raw": 4, "micro_layers": 1,
            "macro_layers": 1, "heads": 2, "d_k": 3, "ffn_hidden": 6, "k": 2},
  "synth": {"n_samples": 16, "seed": 5, "len_t": [2, 4], "len_v": [2, 4], "len_a": [2, 4],
            "d_t_raw": 5, "d_v_raw": 4, "d_a_raw": 4},
  "train": {"epochs": 2, "batch_size": 4, "seed": 9}
})";

}  // namespace

TEST_CASE("config defaults parse and validate") {
  RunConfig rc = load_config("");
  REQUIRE(rc.model.d == 32);
  REQUIRE(rc.model.alpha == 1e-2);
  REQUIRE(rc.model.beta == 1e-3);
  REQUIRE(rc.optim.lr_text == 5e-5);
  REQUIRE(rc.optim.lr_main == 1e-4);
  REQUIRE(rc.train.clip_norm == 1.0);
  REQUIRE(rc.model.k == 0);
  REQUIRE(rc.ablation.seeds.size() == 5);
}

TEST_CASE("config rejects unknown keys at any depth") {
  const auto dir = scratch_dir();
  const auto path = write_file(dir / "bad_top.json", R"({"modle": {"d": 8}})");
  REQUIRE_THROWS_AS(load_config(path), ConfigError);
  const auto nested = write_file(dir / "bad_nested.json", R"({"model": {"dd": 8}})");
  REQUIRE_THROWS_AS(load_config(nested), ConfigError);
  const auto typed = write_file(dir / "bad_type.json", R"({"model": {"d": "eight"}})");
  REQUIRE_THROWS_AS(load_config(typed), ConfigError);
}

TEST_CASE("config merging keeps unrelated defaults") {
  const auto dir = scratch_dir();
  const auto path = write_file(dir / "partial.json", R"({"model": {"d": 16}})");
  RunConfig rc = load_config(path);
  REQUIRE(rc.model.d == 16);
  REQUIRE(rc.model.heads == 4);        // untouched default
  REQUIRE(rc.model.alpha == 1e-2);     // untouched default
}

TEST_CASE("dotted overrides parse as typed values") {
  RunConfig rc = load_config("", {"model.k=44", "loss.beta=-0.001", "model.use_cmb=false",
                                  "train.run_dir=somewhere", "ablation.seeds=[3,4]"});
  REQUIRE(rc.model.k == 44);
  REQUIRE(rc.model.beta == -0.001);
  REQUIRE_FALSE(rc.model.use_cmb);
  REQUIRE(rc.train.run_dir == "somewhere");
  REQUIRE(rc.ablation.seeds == std::vector<std::uint64_t>{3, 4});

  REQUIRE_THROWS_AS(load_config("", {"model.bogus=1"}), ConfigError);
  REQUIRE_THROWS_AS(load_config("", {"plainword"}), ConfigError);
  REQUIRE_THROWS_AS(load_config("", {"nosection.k=1"}), ConfigError);
}

TEST_CASE("config validation catches bad values") {
  REQUIRE_THROWS_AS(load_config("", {"model.d=0"}), ConfigError);
  REQUIRE_THROWS_AS(load_config("", {"model.text_mode=frozen"}), ConfigError);
  REQUIRE_THROWS_AS(load_config("", {"synth.len_t=[5,2]"}), ConfigError);
  REQUIRE_THROWS_AS(load_config("", {"model.d=-4"}), ConfigError);
}

TEST_CASE("cli synth is deterministic and writes valid datasets") {
  const auto dir = scratch_dir();
  const auto cfg = write_file(dir / "tiny.json", kTinyJson);
  const std::string out1 = (dir / "synth1.jsonl").string();
  const std::string out2 = (dir / "synth2.jsonl").string();

  auto r1 = run_cli("synth --config " + cfg + " --set synth.out_path=" + out1);
  auto r2 = run_cli("synth --config " + cfg + " --set synth.out_path=" + out2);
  REQUIRE(r1.exit_code == 0);
  REQUIRE(r2.exit_code == 0);
  REQUIRE(slurp(out1) == slurp(out2));
  REQUIRE(load_dataset(out1).size() == 16);
}

TEST_CASE("cli train runs are reproducible and self-describing") {
  const auto dir = scratch_dir();
  const auto cfg = write_file(dir / "tiny.json", kTinyJson);
  const std::string data = (dir / "train.jsonl").string();
  REQUIRE(run_cli("synth --config " + cfg + " --set synth.out_path=" + data).exit_code == 0);

  const std::string run1 = (dir / "run1").string(), run2 = (dir / "run2").string();
  const std::string common = " --config " + cfg + " --set data.train_path=" + data;
  auto r1 = run_cli("train" + common + " --set train.run_dir=" + run1);
  auto r2 = run_cli("train" + common + " --set train.run_dir=" + run2);
  REQUIRE(r1.exit_code == 0);
  REQUIRE(r2.exit_code == 0);

  // Identical seeds and data give byte-identical epoch records and outputs.
  REQUIRE(slurp(fs::path(run1) / "metrics.jsonl") == slurp(fs::path(run2) / "metrics.jsonl"));
  REQUIRE(slurp(fs::path(run1) / "best.json") == slurp(fs::path(run2) / "best.json"));
  REQUIRE(slurp(fs::path(run1) / "best.bin") == slurp(fs::path(run2) / "best.bin"));

  SECTION("metrics records carry the documented shape") {
    std::ifstream is(fs::path(run1) / "metrics.jsonl");
    std::string line;
    std::size_t records = 0;
    while (std::getline(is, line)) {
      const nlohmann::json rec = nlohmann::json::parse(line);
      ++records;
      for (const char* key : {"epoch", "split", "acc2", "acc7", "f1", "corr", "mae", "loss"})
        REQUIRE(rec.contains(key));
      for (const char* key :
           {"main", "oc_micro", "oc_macro", "diff_micro", "diff_macro", "total"})
        REQUIRE(rec["loss"].contains(key));
    }
    REQUIRE(records == 2);  // one validation record per epoch
  }

  SECTION("eval on the run directory reproduces best.json") {
    auto ev = run_cli("eval --run " + run1);
    REQUIRE(ev.exit_code == 0);
    const nlohmann::json from_eval = nlohmann::json::parse(ev.out);
    const nlohmann::json logged = nlohmann::json::parse(slurp(fs::path(run1) / "best.json"));
    REQUIRE(from_eval["val"] == logged["val"]);
  }

  SECTION("config snapshot pins the merged settings") {
    const nlohmann::json snap = nlohmann::json::parse(slurp(fs::path(run1) / "config.json"));
    REQUIRE(snap["model"]["d"] == 6);
    REQUIRE(snap["data"]["train_path"] == data);
    REQUIRE(snap["train"]["run_dir"] == run1);
  }
}

TEST_CASE("cli error paths exit with code 2") {
  REQUIRE(run_cli("train --set data.train_path=/no/such/file.jsonl").exit_code == 2);
  REQUIRE(run_cli("train --set bogus.key=1").exit_code == 2);
  REQUIRE(run_cli("").exit_code == 2);
  REQUIRE(run_cli("notasubcommand").exit_code == 2);

  const auto dir = scratch_dir();
  const auto broken = write_file(dir / "broken.json", "{ not json");
  REQUIRE(run_cli("train --config " + broken.substr(0, broken.size())).exit_code == 2);
}

TEST_CASE("ablation splits are slices of one generator pool") {
  // Train, val and test must share the modality code directions (keyed by
  // the generator seed); independently seeded splits would put evaluation
  // in a different feature space than training.
  const auto dir = scratch_dir() / "abl_pool";
  fs::remove_all(dir);
  RunConfig rc = load_config("", {"synth.n_samples=12", "ablation.val_samples=5",
                                  "ablation.test_samples=6", "synth.len_t=[2,3]",
                                  "synth.len_v=[2,3]", "synth.len_a=[2,3]", "synth.d_t_raw=6",
                                  "synth.d_v_raw=5", "synth.d_a_raw=5",
                                  "ablation.out_dir=" + dir.string()});
  const std::uint64_t seed = 3;
  DataPaths paths = ablation_datasets(rc, seed);

  SynthConfig sc = rc.synth;
  sc.n_samples = 12 + 5 + 6;
  sc.seed = mix64(seed ^ fnv1a("ablation.data"));
  const auto pool = generate_synthetic(sc);

  const auto train = load_dataset(paths.train_path);
  const auto val = load_dataset(paths.val_path);
  const auto test = load_dataset(paths.test_path);
  REQUIRE(train.size() == 12);
  REQUIRE(val.size() == 5);
  REQUIRE(test.size() == 6);
  std::size_t at = 0;
  for (const auto* split : {&train, &val, &test})
    for (const auto& s : *split) {
      REQUIRE(s.id == pool[at].id);
      REQUIRE(s.label == pool[at].label);
      ++at;
    }

  // Re-request reuses the files on disk.
  DataPaths again = ablation_datasets(rc, seed);
  REQUIRE(again.train_path == paths.train_path);
  fs::remove_all(dir);
}

TEST_CASE("cli decompose reports the split of a matrix file") {
  const auto dir = scratch_dir();
  // Rank-1: with k >= 1 the conflict part vanishes.
  const auto mat = write_file(dir / "rank1.json", R"({"matrix": [[1, 2], [2, 4], [3, 6]]})");
  auto r = run_cli("decompose --matrix " + mat + " --k 1");
  REQUIRE(r.exit_code == 0);
  const nlohmann::json out = nlohmann::json::parse(r.out);
  REQUIRE(out["k_used"] == 1);
  REQUIRE(out["conflict_norm"].get<double>() < 1e-12);
  REQUIRE(out["aligned"].size() == 3);

  REQUIRE(run_cli("decompose --matrix /no/such.json --k 1").exit_code == 2);
}
