#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <sys/wait.h>

#include "test_support.hpp"
#include "vacuform/dataset.hpp"

using namespace vacuform;
using vacuform::testing::TempDir;

namespace {

struct RunResult {
  int code = -1;
  std::string out;
};

RunResult run(const std::string& args) {
  const std::string cmd = std::string(VACUFORM_CLI_PATH) + " " + args + " 2>/dev/null";
  RunResult r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf{};
  std::size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

json run_json(const std::string& args) {
  const auto r = run("--json " + args);
  EXPECT_EQ(r.code, 0) << args << "\n" << r.out;
  return json::parse(r.out);
}

// Small, fast pipeline settings shared by the end-to-end tests.
const std::string kTiny =
    "--set oracle.image_size=32 --set model.input_size=16 --set model.stem_channels=3 "
    "--set model.stage_channels=4 --set model.hidden_units=4 --set train.batch_size=8 "
    "--set train.validation_composites=2 --set advisor.n_composites=4 --set eval.composites_per_sample=2";

}  // namespace

TEST(Cli, GenDataTable1WritesAllGridPoints) {
  TempDir d("cli_t1");
  const auto j = run_json("--set oracle.image_size=32 gen-data --out " + (d / "ds").string());
  EXPECT_EQ(j["samples"], 234);
  EXPECT_EQ(j["failure_modes"]["underheated"], 132);
  EXPECT_EQ(j["failure_modes"]["good"], 32);
  const auto m = load_manifest(d / "ds");
  EXPECT_EQ(m.samples.size(), 234u);
  EXPECT_EQ(m.train_ids().size() + m.test_ids().size(), 234u);
}

TEST(Cli, EndToEndPipeline) {
  TempDir d("cli_e2e");
  const auto ds = (d / "ds").string();
  auto j = run_json(kTiny + " gen-data --out " + ds + " --grid random --samples 24 --seed 3");
  EXPECT_EQ(j["samples"], 24);

  j = run_json(kTiny + " label --dataset " + ds);
  EXPECT_EQ(j["count"], 24);
  EXPECT_TRUE(std::filesystem::exists(d / "ds" / "labels.json"));

  const auto ckpt = (d / "m.json").string();
  j = run_json(kTiny + " train --dataset " + ds + " --out " + ckpt + " --max-epochs 1 --composites-per-sample 2");
  EXPECT_EQ(j["epochs_seen"], 1);
  EXPECT_TRUE(std::filesystem::exists(d / "metrics" / "metrics.json"));
  EXPECT_TRUE(std::filesystem::exists(d / "metrics" / "training.csv"));

  j = run_json(kTiny + " eval --checkpoint " + ckpt + " --dataset " + ds + " --partition test --out " +
               (d / "eval").string());
  EXPECT_TRUE(j.contains("mse"));
  EXPECT_TRUE(std::filesystem::exists(d / "eval" / "eval.csv"));

  const auto m = load_manifest(d / "ds");
  const auto views_dir = (d / "ds" / "images" / m.samples[0].id).string();
  j = run_json(kTiny + " suggest --checkpoint " + ckpt + " --views " + views_dir +
               " --heat-power 60 --heat-time 30 --vacuum-time 4");
  EXPECT_EQ(j["delta_norm"].size(), 3u);
  EXPECT_EQ(j["aggregation"]["n_composites"], 4);

  j = run_json(kTiny + " simulate-loop --checkpoint " + ckpt + " --out " + (d / "loop").string() +
               " --starts 2 --max-cycles 1");
  EXPECT_TRUE(std::filesystem::exists(d / "loop" / "summary.json"));
  EXPECT_TRUE(std::filesystem::exists(d / "loop" / "session_log.json"));
}

TEST(Cli, LabelOnAllGoodDatasetGivesZeroVectors) {
  TempDir d("cli_good");
  const auto oc = vacuform::testing::small_oracle();
  const ProcessParams p{100, 31, 6};
  ASSERT_EQ(classify_outcome(p, oc).failure_mode, FailureMode::good);
  const auto views = render_views(p, classify_outcome(p, oc), 1, oc);
  std::filesystem::create_directories(d / "img");
  for (int k = 0; k < 17; ++k) write_png(d / "img" / (std::to_string(k) + ".png"), views[std::size_t(k)]);
  for (const std::string id : {"a", "b"}) {
    std::ofstream(d / (id + ".json")) << json{{"id", id},
                                              {"params", params_to_json(p)},
                                              {"verdict", "good"},
                                              {"failure_mode", "good"}}
                                             .dump();
    EXPECT_EQ(run("ingest --dataset " + (d / "ds").string() + " --entry " + (d / (id + ".json")).string() +
                  " --images " + (d / "img").string())
                  .code,
              0);
  }
  const auto j = run_json("label --dataset " + (d / "ds").string());
  EXPECT_EQ(j["count"], 2);
  EXPECT_EQ(j["zero_vectors"], 2);
}

TEST(Cli, ExitCodes) {
  TempDir d("cli_codes");
  EXPECT_EQ(run("").code, 1);                            // no subcommand
  EXPECT_EQ(run("bogus").code, 1);                       // unknown subcommand
  EXPECT_EQ(run("label").code, 1);                       // missing required option
  EXPECT_EQ(run("--help").code, 0);
  EXPECT_EQ(run("--set nodot gen-data --out " + (d / "x").string()).code, 1);
  EXPECT_EQ(run("--set train.batch_size=many train --dataset " + (d / "x").string() + " --out m.json").code, 1);
  EXPECT_EQ(run("label --dataset " + (d / "missing").string()).code, 1);  // not found
  EXPECT_EQ(run("eval --checkpoint " + (d / "none.json").string() + " --dataset " + (d / "x").string() +
                " --out " + (d / "e").string())
                .code,
            1);
}

TEST(Cli, JsonFlagPrintsParsableOutput) {
  TempDir d("cli_json");
  const auto r = run("--json --set oracle.image_size=32 gen-data --out " + (d / "ds").string() +
                     " --grid random --samples 3");
  ASSERT_EQ(r.code, 0);
  const auto j = json::parse(r.out);
  EXPECT_EQ(j["schema_version"], 1);
  EXPECT_EQ(j["samples"], 3);
  const auto human = run("--set oracle.image_size=32 gen-data --out " + (d / "ds2").string() +
                         " --grid random --samples 3");
  EXPECT_NE(human.out.find("wrote 3 samples"), std::string::npos);
}
