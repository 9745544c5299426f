#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "dsr/cli.h"

using namespace dsr;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// overrides shrinking everything to seconds-scale
const std::vector<std::string> kTinyOverrides = {
    "synth.hr_w=32",  "synth.hr_h=16",  "synth.count=3",
    "model.teacher.base_channels=6", "model.teacher.res_blocks_per_stage=1",
    "model.student.base_channels=6", "model.student.res_blocks_per_stage=1",
    "model.depth_net.unet_depth=1",  "model.depth_net.base_channels=6",
    "model.match.block_w=4", "model.match.block_h=4", "model.critic_channels=6",
    "train.steps=3"};

int run(std::vector<std::string> args, const std::vector<std::string>& extra = {}) {
  for (const auto& e : extra) args.push_back(e);
  return cli::dispatch(args);
}

}  // namespace

TEST_CASE("unknown command and unknown flag exit with code 2") {
  CHECK(cli::dispatch({"frobnicate"}) == 2);
  CHECK(cli::dispatch({"synth", "--definitely-not-a-flag", "1"}) == 2);
  CHECK(cli::dispatch({}) == 2);
}

TEST_CASE("synth is bitwise reproducible and writes provenance") {
  fs::remove_all("tmp_cli_a");
  fs::remove_all("tmp_cli_b");
  CHECK(run({"synth", "--n", "2", "--seed", "7", "--out", "tmp_cli_a"},
            {"synth.hr_w=32", "synth.hr_h=16"}) == 0);
  CHECK(run({"synth", "--n", "2", "--seed", "7", "--out", "tmp_cli_b"},
            {"synth.hr_w=32", "synth.hr_h=16"}) == 0);

  int files = 0;
  for (const auto& e : fs::recursive_directory_iterator("tmp_cli_a")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), "tmp_cli_a");
    CHECK(slurp(e.path()) == slurp(fs::path("tmp_cli_b") / rel));
    ++files;
  }
  CHECK(files > 4);

  nlohmann::json prov;
  std::ifstream("tmp_cli_a/resolved_config.json") >> prov;
  CHECK(prov["command"] == "synth");
  CHECK(prov["config"]["train"]["epochs"] == 250);  // full default echo
  CHECK(prov["config"]["synth"]["seed"] == 7);
  fs::remove_all("tmp_cli_a");
  fs::remove_all("tmp_cli_b");
}

TEST_CASE("synth/train/eval/infer chain produces the contracted artifacts") {
  fs::remove_all("tmp_cli_ds");
  fs::remove_all("tmp_cli_run");
  fs::remove_all("tmp_cli_eval");
  fs::remove_all("tmp_cli_infer");

  REQUIRE(run({"synth", "--seed", "3", "--out", "tmp_cli_ds"}, kTinyOverrides) == 0);
  REQUIRE(run({"train", "--data", "tmp_cli_ds", "--out", "tmp_cli_run", "--mode",
               "teacher-rec-dep", "--seed", "5"},
              kTinyOverrides) == 0);
  CHECK(fs::exists("tmp_cli_run/train_log.csv"));
  CHECK(fs::exists("tmp_cli_run/ckpt_final/weights.bin"));
  CHECK(fs::exists("tmp_cli_run/ckpt_final/arch.json"));
  CHECK(fs::exists("tmp_cli_run/ckpt_final/meta.json"));

  REQUIRE(run({"eval", "--ckpt", "tmp_cli_run/ckpt_final", "--data", "tmp_cli_ds", "--out",
               "tmp_cli_eval"},
              kTinyOverrides) == 0);
  CHECK(fs::exists("tmp_cli_eval/report.json"));
  CHECK(fs::exists("tmp_cli_eval/report.csv"));
  {
    std::ifstream csv("tmp_cli_eval/report.csv");
    std::string header;
    std::getline(csv, header);
    CHECK(header == "method,PSNR,SSIM,FLOPs(G),Params(M)");
  }

  REQUIRE(run({"infer", "--ckpt", "tmp_cli_run/ckpt_final", "--data", "tmp_cli_ds", "--n",
               "2", "--out", "tmp_cli_infer"},
              kTinyOverrides) == 0);
  CHECK(fs::exists("tmp_cli_infer/sr_s000000.png"));
  CHECK(fs::exists("tmp_cli_infer/sr_s000001.png"));
  CHECK(fs::exists("tmp_cli_infer/infer_log.json"));

  fs::remove_all("tmp_cli_ds");
  fs::remove_all("tmp_cli_run");
  fs::remove_all("tmp_cli_eval");
  fs::remove_all("tmp_cli_infer");
}

TEST_CASE("missing inputs and bad overrides fail with a diagnostic exit") {
  CHECK(run({"train", "--out", "tmp_none"}) == 1);           // no --data
  CHECK(run({"eval", "--data", "nowhere", "--out", "t"}) == 1);  // no --ckpt
  CHECK(run({"synth", "--out", "tmp_bad"}, {"synth.bogus_key=1"}) == 1);
  CHECK(run({"synth", "--out", "tmp_bad"}, {"preset=nope"}) == 1);
  fs::remove_all("tmp_none");
  fs::remove_all("tmp_bad");
}

TEST_CASE("bench emits timings") {
  fs::remove_all("tmp_cli_bench");
  CHECK(run({"bench", "--out", "tmp_cli_bench"}) == 0);
  nlohmann::json rows;
  std::ifstream("tmp_cli_bench/bench.json") >> rows;
  CHECK(rows.size() >= 5);
  for (const auto& r : rows) CHECK(r["ms"].get<double>() >= 0.0);
  fs::remove_all("tmp_cli_bench");
}

TEST_CASE("ablate emits one row per grid configuration") {
  fs::remove_all("tmp_cli_ablate");
  REQUIRE(run({"ablate", "--seed", "11", "--out", "tmp_cli_ablate"}, kTinyOverrides) == 0);
  nlohmann::json rows;
  std::ifstream("tmp_cli_ablate/ablate.json") >> rows;
  REQUIRE(rows.size() == 7);
  const std::vector<std::string> expect = {
      "rec-only",    "rec+depth-gt",   "rec+depth-net",    "student-rec",
      "student-rec+kd", "student-rec+ad", "student-rec+kd+ad"};
  for (size_t i = 0; i < expect.size(); ++i) CHECK(rows[i]["name"] == expect[i]);
  CHECK(fs::exists("tmp_cli_ablate/ablate.csv"));
  fs::remove_all("tmp_cli_ablate");
}
