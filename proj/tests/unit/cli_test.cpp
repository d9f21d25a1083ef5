// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "leafnet/checkpoint.hpp"
#include "leafnet/data.hpp"
#include "leafnet/error.hpp"
#include "leafnet_cli/cli.hpp"
#include "leafnet_cli/config.hpp"
#include "test_util.hpp"

namespace leafnet::cli {
namespace {

namespace fs = std::filesystem;

struct RunResult {
  int code;
  std::string out;
  std::string err;
};

RunResult invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

// Small f64 runs keep these tests fast and bit-reproducible.
std::vector<std::string> quick_sets() {
  return {"--set", "image_size=16", "--set", "dtype=f64", "--set", "epochs=2", "--set", "batch_size=8",
          "--set", "lr=0.001"};
}

void make_synth(const fs::path& root, std::size_t variant = 0) {
  const auto r = invoke({"synth", "--classes", "3", "--per-class", "6", "--test-per-class", "4", "--size", "16",
                         "--seed", "5", "--variant", std::to_string(variant), "--out", root.string()});
  ASSERT_EQ(r.code, kOk) << r.err;
}

TEST(Config, ParsesCommentsAndOverrides) {
  Config c;
  c.merge_text("# comment\nlr = 0.01\n\nbatch_size=16  # trailing\n");
  EXPECT_EQ(c.get_double("lr"), 0.01);
  EXPECT_EQ(c.get_size("batch_size"), 16u);
  EXPECT_TRUE(c.is_set("lr"));
  EXPECT_FALSE(c.is_set("seed"));
  c.set("head_widths", "32,16");
  EXPECT_EQ(c.get_sizes("head_widths"), (std::vector<std::size_t>{32, 16}));
  const auto tc = c.train_config();
  EXPECT_EQ(tc.batch_size, 16u);
  EXPECT_EQ(tc.optimizer.base_lr, 0.01);
}

TEST(Config, Errors) {
  Config c;
  try {
    c.merge_text("learning_rate=0.1");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownConfigKey);
  }
  EXPECT_THROW(c.merge_text("no equals sign"), Error);
  c.set("batch_size", "many");
  EXPECT_THROW((void)c.get_size("batch_size"), Error);
}

TEST(Config, PresetInputDefaults) {
  Config c;
  EXPECT_EQ(c.input().height, 32u);
  c.set("preset", "resnet50");
  EXPECT_EQ(c.input().height, 224u);
  c.set("image_size", "64");
  EXPECT_EQ(c.input().width, 64u);
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(invoke({}).code, kBadArgs);
  EXPECT_EQ(invoke({"bogus"}).code, kBadArgs);
  const auto r = invoke({"train"});
  EXPECT_EQ(r.code, kBadArgs);
  EXPECT_NE(r.err.find("missing required --data"), std::string::npos);
  EXPECT_EQ(invoke({"train", "--data", "x", "--out", "y", "--set", "nope=1"}).code, kBadArgs);
  EXPECT_EQ(invoke({"schedule", "--lr0", "0.1", "--steps", "0"}).code, kBadArgs);
  EXPECT_EQ(invoke({"--help"}).code, kOk);
}

TEST(Cli, DataErrorsExitThree) {
  testing::TempDir dir;
  EXPECT_EQ(invoke({"scan", "--data", (dir / "missing").string()}).code, kDataError);
  EXPECT_EQ(invoke({"evaluate", "--ckpt", (dir / "none.ckpt").string(), "--data", dir.path().string()}).code,
            kDataError);
}

TEST(Cli, SynthTreeRescans) {
  testing::TempDir dir;
  make_synth(dir / "d");
  const auto r = invoke({"scan", "--data", (dir / "d").string()});
  ASSERT_EQ(r.code, kOk);
  EXPECT_NE(r.out.find("classes 3"), std::string::npos);
  EXPECT_NE(r.out.find("train 18 images"), std::string::npos);
  EXPECT_NE(r.out.find("test 12 images"), std::string::npos);
  const auto m = scan_dataset(dir / "d");
  EXPECT_EQ(m.class_names, (std::vector<std::string>{"class_0", "class_1", "class_2"}));
}

TEST(Cli, TrainIsReproducibleAndWritesArtifacts) {
  testing::TempDir dir;
  make_synth(dir / "d");
  std::string csv[2];
  for (int i = 0; i < 2; ++i) {
    const auto out = dir / ("run" + std::to_string(i)) / "model.ckpt";
    auto args = std::vector<std::string>{"train", "--data", (dir / "d").string(), "--out", out.string(), "--seed", "3"};
    for (auto& s : quick_sets()) args.push_back(s);
    const auto r = invoke(args);
    ASSERT_EQ(r.code, kOk) << r.err;
    EXPECT_NE(r.out.find("epochs=2"), std::string::npos);
    EXPECT_TRUE(fs::exists(out));
    EXPECT_TRUE(fs::exists(out.parent_path() / "model.run.cfg"));
    csv[i] = slurp(out.parent_path() / "model.history.csv");
  }
  EXPECT_EQ(csv[0], csv[1]);
  EXPECT_EQ(csv[0].rfind("epoch,train_loss", 0), 0u);

  const auto report = dir / "report.json";
  const auto ev = invoke({"evaluate", "--ckpt", (dir / "run0" / "model.ckpt").string(), "--data",
                          (dir / "d").string(), "--report", report.string()});
  ASSERT_EQ(ev.code, kOk) << ev.err;
  const auto rep = load_report(report.string());
  EXPECT_EQ(rep.per_class.size(), 3u);
  EXPECT_NE(ev.out.find("Model"), std::string::npos);

  const auto cmp = invoke({"compare", "--reports", report.string(), report.string(), "--csv"});
  ASSERT_EQ(cmp.code, kOk);
  EXPECT_EQ(std::count(cmp.out.begin(), cmp.out.end(), '\n'), 3);
}

TEST(Cli, FinetuneWithNoBackboneLayersKeepsBackbone) {
  testing::TempDir dir;
  make_synth(dir / "d");
  auto args = std::vector<std::string>{"train", "--data", (dir / "d").string(), "--out", (dir / "base.ckpt").string()};
  for (auto& s : quick_sets()) args.push_back(s);
  ASSERT_EQ(invoke(args).code, kOk);

  make_synth(dir / "shifted", 1);
  auto ft = std::vector<std::string>{"finetune", "--base", (dir / "base.ckpt").string(), "--data",
                                     (dir / "shifted").string(), "--out", (dir / "ft.ckpt").string(),
                                     "--unfreeze-last", "0"};
  for (auto& s : quick_sets()) ft.push_back(s);
  const auto r = invoke(ft);
  ASSERT_EQ(r.code, kOk) << r.err;

  const auto base = load_checkpoint(dir / "base.ckpt");
  const auto tuned = load_checkpoint(dir / "ft.ckpt");
  std::size_t compared = 0;
  for (const auto& [name, t] : base.tensors) {
    if (name.rfind("head.", 0) == 0) continue;
    const auto it = std::find_if(tuned.tensors.begin(), tuned.tensors.end(),
                                 [&](const auto& p) { return p.first == name; });
    ASSERT_NE(it, tuned.tensors.end()) << name;
    EXPECT_TRUE(it->second.bitwise_equal(t)) << name;
    ++compared;
  }
  EXPECT_GT(compared, 40u);

  ft[8] = "999";
  EXPECT_EQ(invoke(ft).code, kBadArgs);
  auto wrong = ft;
  wrong[8] = "2";
  wrong.insert(wrong.end(), {"--preset", "resnet50"});
  EXPECT_EQ(invoke(wrong).code, kDataError);
}

TEST(Cli, ComparePublishedFixtures) {
  std::vector<std::string> args{"compare", "--reports"};
  for (const char* f : {"resnet50_baseline", "vgg16", "densenet121", "alexnet"})
    args.push_back(std::string(LEAFNET_FIXTURE_DIR) + "/table1_" + f + ".json");
  const auto r = invoke(args);
  ASSERT_EQ(r.code, kOk);
  EXPECT_NE(r.out.find("DenseNet121"), std::string::npos);
  EXPECT_NE(r.out.find("0.93"), std::string::npos);
}

TEST(Cli, ScheduleCsv) {
  const auto r = invoke({"schedule", "--lr0", "0.1", "--steps", "4"});
  ASSERT_EQ(r.code, kOk);
  std::istringstream in(r.out);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "step,lr");
  std::getline(in, line);
  EXPECT_EQ(line, "0,0.10000000000000001");
  int rows = 1;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 5);
}

TEST(Cli, BinaryExitCodes) {
  // The installed executable maps errors the same way as run().
  EXPECT_EQ(std::system((std::string(LEAFNET_CLI_PATH) + " schedule --lr0 0.1 --steps 2 > /dev/null").c_str()), 0);
  const int status = std::system((std::string(LEAFNET_CLI_PATH) + " train > /dev/null 2>&1").c_str());
  EXPECT_EQ(WEXITSTATUS(status), kBadArgs);
}

}  // namespace
}  // namespace leafnet::cli
