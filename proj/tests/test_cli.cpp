// Copyright 2026 The emlab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "emlab/cli.hpp"
#include "emlab/errors.hpp"

namespace emlab {
namespace {

namespace fs = std::filesystem;

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

std::size_t count_lines(const fs::path& p) {
  const auto s = slurp(p);
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("emlab_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  void write(const std::string& name, const std::string& text) const {
    std::ofstream f(dir_ / name, std::ios::binary);
    f << text;
  }

  // A small dataset and tiny model keep the end-to-end runs fast.
  std::vector<std::string> tiny_model() const {
    return {"--encoder.n_layers", "1", "--encoder.d_model", "16", "--encoder.n_heads", "2", "--encoder.d_ff", "32"};
  }

  void gen(const std::string& out) const {
    ASSERT_EQ(cli({"gen-data", "--out", out, "--toy.n_clusters", "3", "--toy.n_per_cluster", "8",
                   "--toy.held_out_per_cluster", "4", "--toy.n_misleading", "2"})
                  .code,
              0);
  }

  fs::path dir_;
};

TEST(CliConfig, EverySubcommandHelpListsItsKeys) {
  const std::map<std::string, std::vector<std::string>> sections = {
      {"gen-data", {"toy"}},
      {"mine", {"mining", "mine"}},
      {"train", {"encoder", "pretrain", "finetune", "mining", "train"}},
      {"merge", {"merge"}},
      {"embed", {"embed"}},
      {"eval", {"encoder", "eval"}},
  };
  for (const auto& [sub, secs] : sections) {
    const auto r = cli({sub, "--help"});
    ASSERT_EQ(r.code, 0) << sub;
    for (const auto& flag : {"--config", "--seed", "--threads", "--preset", "--out"}) {
      EXPECT_NE(r.out.find(flag), std::string::npos) << sub << " " << flag;
    }
    for (const auto& key : config_keys()) {
      const auto section = key.path.substr(0, key.path.find('.'));
      if (std::find(secs.begin(), secs.end(), section) == secs.end()) continue;
      EXPECT_NE(r.out.find("--" + key.path + " "), std::string::npos) << sub << " lacks --" << key.path;
    }
  }
}

TEST(CliConfig, PresetsHoldEveryKey) {
  for (const auto* name : {"desk", "paper"}) {
    const auto cfg = preset_config(name);
    for (const auto& key : config_keys()) {
      std::string p = "/" + key.path;
      std::replace(p.begin(), p.end(), '.', '/');
      EXPECT_TRUE(cfg.contains(nlohmann::json::json_pointer(p))) << name << " " << key.path;
    }
  }
  EXPECT_THROW(preset_config("laptop"), ConfigError);
}

TEST(CliConfig, PaperPresetCarriesPublishedStages) {
  const auto cfg = preset_config("paper");
  EXPECT_EQ(stage_config_from(cfg, Stage::kPretrain).batch_size, 2048u);
  EXPECT_EQ(stage_config_from(cfg, Stage::kFinetune).n_steps, 33668u);
  EXPECT_DOUBLE_EQ(stage_config_from(cfg, Stage::kFinetune).peak_lr, 2e-6);
}

TEST(CliConfig, OverlayRejectsUnknownAndMistypedKeys) {
  auto cfg = preset_config("desk");
  EXPECT_THROW(overlay_config(cfg, {{"toy", {{"vocabb", 3}}}}, "."), ConfigError);
  EXPECT_THROW(overlay_config(cfg, {{"extra", 1}}, "."), ConfigError);
  EXPECT_THROW(overlay_config(cfg, {{"toy", {{"vocab", "many"}}}}, "."), ConfigError);
  EXPECT_THROW(overlay_config(cfg, {{"seed", -1}}, "."), ConfigError);
  EXPECT_THROW(overlay_config(cfg, {{"pretrain", 3}}, "."), ConfigError);
  overlay_config(cfg, {{"pretrain", {{"n_steps", 7}}}, {"mining.k", 3}}, ".");
  EXPECT_EQ(cfg["pretrain"]["n_steps"], 7);
  EXPECT_EQ(cfg["mining"]["k"], 3);
}

TEST(CliConfig, RelativePathsResolveAgainstTheirSource) {
  auto cfg = preset_config("desk");
  overlay_config(cfg, {{"mine", {{"input", "data/x.jsonl"}}}, {"mining", {{"teachers", {"lexical", "m.emlb"}}}}},
                 "/srv/run");
  EXPECT_EQ(cfg["mine"]["input"], "/srv/run/data/x.jsonl");
  EXPECT_EQ(cfg["mining"]["teachers"][0], "lexical");
  EXPECT_EQ(cfg["mining"]["teachers"][1], "/srv/run/m.emlb");
}

TEST(CliConfig, DerivedSeedsAreStableAndDistinct) {
  EXPECT_EQ(derive_seed(7, "toy"), derive_seed(7, "toy"));
  EXPECT_NE(derive_seed(7, "toy"), derive_seed(7, "encoder"));
  EXPECT_NE(derive_seed(7, "toy"), derive_seed(8, "toy"));
  auto cfg = preset_config("desk");
  EXPECT_NE(stage_config_from(cfg, Stage::kPretrain).seed, stage_config_from(cfg, Stage::kFinetune).seed);
}

TEST_F(CliTest, FlagBeatsConfigBeatsPreset) {
  write("c.json", R"({"toy": {"n_per_cluster": 5}})");
  ASSERT_EQ(cli({"gen-data", "--out", path("a")}).code, 0);
  EXPECT_EQ(count_lines(path("a/train.jsonl")), 8u * 64u);
  ASSERT_EQ(cli({"gen-data", "--out", path("b"), "--config", path("c.json")}).code, 0);
  EXPECT_EQ(count_lines(path("b/train.jsonl")), 40u);
  ASSERT_EQ(cli({"gen-data", "--out", path("c"), "--config", path("c.json"), "--toy.n_per_cluster", "3"}).code, 0);
  EXPECT_EQ(count_lines(path("c/train.jsonl")), 24u);
}

TEST_F(CliTest, OutDirectoryFromConfigIsRelativeToTheConfigFile) {
  write("c.json", R"({"out": "run1", "toy": {"n_per_cluster": 2}})");
  ASSERT_EQ(cli({"gen-data", "--config", path("c.json")}).code, 0);
  EXPECT_TRUE(fs::exists(dir_ / "run1" / "train.jsonl"));
}

TEST_F(CliTest, GenDataIsSeedDeterministic) {
  ASSERT_EQ(cli({"gen-data", "--out", path("a"), "--seed", "5"}).code, 0);
  ASSERT_EQ(cli({"gen-data", "--out", path("b"), "--seed", "5"}).code, 0);
  ASSERT_EQ(cli({"gen-data", "--out", path("c"), "--seed", "6"}).code, 0);
  EXPECT_EQ(slurp(path("a/train.jsonl")), slurp(path("b/train.jsonl")));
  EXPECT_EQ(slurp(path("a/eval.jsonl")), slurp(path("b/eval.jsonl")));
  EXPECT_NE(slurp(path("a/train.jsonl")), slurp(path("c/train.jsonl")));
}

TEST_F(CliTest, UsageErrorsExitOne) {
  const auto r = cli({"gen-data", "--no-such-flag", "1"});
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("emlab: error=usage exit=1 ", 0), 0u) << r.err;
  EXPECT_EQ(cli({}).code, 1);
  EXPECT_EQ(cli({"gen-data", "--toy.vocab", "lots"}).code, 1);
  EXPECT_EQ(cli({"gen-data", "--preset", "laptop"}).code, 1);
  write("bad.json", "{ not json");
  EXPECT_EQ(cli({"gen-data", "--config", path("bad.json")}).code, 1);

  const auto missing = cli({"mine", "--mine.input", path("absent.jsonl"), "--out", path("o")});
  EXPECT_EQ(missing.code, 1);
  EXPECT_NE(missing.err.find("absent.jsonl"), std::string::npos);
}

TEST_F(CliTest, MalformedDataExitsTwoWithLineNumber) {
  write("d.jsonl", "{\"task_family\":\"retrieval\",\"instruction\":\"i\",\"query\":\"a\",\"positive\":\"b\"}\n{oops\n");
  const auto r = cli({"mine", "--mine.input", path("d.jsonl"), "--out", path("o")});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.err.rfind("emlab: error=parse exit=2 line 2: ", 0), 0u) << r.err;
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
}

TEST_F(CliTest, EmbedIsByteIdenticalAcrossRuns) {
  EncoderConfig ec;
  ec.n_layers = 1;
  ec.d_model = 16;
  ec.n_heads = 2;
  ec.d_ff = 32;
  ec.seed = 0;
  save_checkpoint(path("m.emlb"), Checkpoint::from_encoder(Encoder(ec)));
  write("t.jsonl", "{\"id\": \"q1\", \"text\": \"a single text\", \"instruction\": \"Find it\"}\n");
  ASSERT_EQ(cli({"embed", "--embed.checkpoint", path("m.emlb"), "--embed.input", path("t.jsonl"), "--out", path("a")})
                .code,
            0);
  ASSERT_EQ(cli({"embed", "--embed.checkpoint", path("m.emlb"), "--embed.input", path("t.jsonl"), "--out", path("b")})
                .code,
            0);
  const auto a = slurp(path("a/embeddings.jsonl"));
  EXPECT_EQ(a, slurp(path("b/embeddings.jsonl")));
  const auto j = nlohmann::json::parse(a);
  EXPECT_EQ(j["id"], "q1");
  EXPECT_EQ(j["vector"].size(), 16u);
}

TEST_F(CliTest, MergeOfMismatchedArchitecturesNamesTheParameter) {
  EncoderConfig a;
  a.n_layers = 1;
  a.d_model = 16;
  a.n_heads = 2;
  a.d_ff = 32;
  EncoderConfig b = a;
  b.d_ff = 48;
  save_checkpoint(path("a.emlb"), Checkpoint::from_encoder(Encoder(a)));
  save_checkpoint(path("b.emlb"), Checkpoint::from_encoder(Encoder(b)));
  const auto r = cli({"merge", "--merge.checkpoints", path("a.emlb") + "," + path("b.emlb"), "--out", path("o")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("layers.0.w_gate"), std::string::npos) << r.err;

  a.seed = 9;
  save_checkpoint(path("c.emlb"), Checkpoint::from_encoder(Encoder(a)));
  const auto ok = cli({"merge", "--merge.checkpoints", path("a.emlb") + "," + path("c.emlb"), "--merge.weights",
                       "0.25,0.75", "--out", path("o")});
  EXPECT_EQ(ok.code, 0) << ok.err;
  EXPECT_TRUE(fs::exists(path("o/merged.emlb")));
}

TEST_F(CliTest, DivergentTrainingExitsThree) {
  gen(path("d"));
  ASSERT_EQ(cli({"mine", "--mine.input", path("d/train.jsonl"), "--out", path("m")}).code, 0);
  std::vector<std::string> args = {"train", "--train.stage", "pretrain", "--pretrain.n_steps", "40",
                                   "--pretrain.batch_size", "4", "--pretrain.warmup_steps", "1",
                                   "--pretrain.peak_lr", "1e100", "--train.input", path("m/mined.jsonl"),
                                   "--out", path("t")};
  const auto tiny = tiny_model();
  args.insert(args.end(), tiny.begin(), tiny.end());
  const auto r = cli(args);
  EXPECT_EQ(r.code, 3) << r.err;
  EXPECT_EQ(r.err.rfind("emlab: error=numeric exit=3 ", 0), 0u) << r.err;
}

TEST_F(CliTest, PipelineIsReproducibleInSerialMode) {
  gen(path("d"));
  auto pipeline = [&](const std::string& tag) {
    const auto o = path(tag);
    ASSERT_EQ(cli({"mine", "--mine.input", path("d/train.jsonl"), "--mining.k", "4", "--out", o}).code, 0);
    std::vector<std::string> train = {"train",
                                      "--train.input",
                                      o + "/mined.jsonl",
                                      "--mining.k",
                                      "4",
                                      "--pretrain.n_steps",
                                      "6",
                                      "--pretrain.warmup_steps",
                                      "2",
                                      "--pretrain.batch_size",
                                      "4",
                                      "--finetune.n_steps",
                                      "4",
                                      "--finetune.warmup_steps",
                                      "1",
                                      "--finetune.batch_size",
                                      "4",
                                      "--threads",
                                      "1",
                                      "--out",
                                      o};
    const auto tiny = tiny_model();
    train.insert(train.end(), tiny.begin(), tiny.end());
    const auto r = cli(train);
    ASSERT_EQ(r.code, 0) << r.err;
    std::vector<std::string> ev = {"eval", "--eval.input", path("d/eval.jsonl"), "--eval.models",
                                   o + "/finetune.emlb,lexical,untrained", "--out", o};
    ev.insert(ev.end(), tiny.begin(), tiny.end());
    const auto e = cli(ev);
    ASSERT_EQ(e.code, 0) << e.err;
  };
  pipeline("a");
  pipeline("b");
  for (const auto* f : {"mined.jsonl", "pretrain.emlb", "finetune.emlb", "loss_trace.csv", "scores.csv", "report.txt"}) {
    EXPECT_EQ(slurp(path(std::string("a/") + f)), slurp(path(std::string("b/") + f))) << f;
  }
  EXPECT_EQ(count_lines(path("a/loss_trace.csv")), 1u + 6u + 4u);
  const auto report = slurp(path("a/report.txt"));
  EXPECT_NE(report.find("recall@1"), std::string::npos);
  EXPECT_NE(report.find("lexical"), std::string::npos);
  EXPECT_NE(report.find("Borda Votes"), std::string::npos);
  // 3 models x 3 toy tasks
  EXPECT_EQ(count_lines(path("a/scores.csv")), 1u + 9u);
}

TEST_F(CliTest, FinetuneNeedsNoPretrainWhenStartingFromACheckpoint) {
  gen(path("d"));
  ASSERT_EQ(cli({"mine", "--mine.input", path("d/train.jsonl"), "--mining.k", "4", "--out", path("m")}).code, 0);
  auto tiny = tiny_model();
  EncoderConfig ec;
  ec.n_layers = 1;
  ec.d_model = 16;
  ec.n_heads = 2;
  ec.d_ff = 32;
  save_checkpoint(path("init.emlb"), Checkpoint::from_encoder(Encoder(ec)));
  std::vector<std::string> args = {"train",           "--train.stage",       "finetune",   "--train.init",
                                   path("init.emlb"), "--train.input",       path("m/mined.jsonl"),
                                   "--finetune.n_steps", "3", "--finetune.warmup_steps", "1", "--out", path("t")};
  args.insert(args.end(), tiny.begin(), tiny.end());
  const auto r = cli(args);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(path("t/finetune.emlb")));
  EXPECT_FALSE(fs::exists(path("t/pretrain.emlb")));
  const auto cp = load_checkpoint(path("t/finetune.emlb"));
  EXPECT_EQ(cp.metadata.at("parent"), checkpoint_hash(load_checkpoint(path("init.emlb"))));

  args.push_back("--encoder.d_ff");
  args.push_back("40");
  const auto mismatch = cli(args);
  EXPECT_EQ(mismatch.code, 2) << mismatch.err;
}

}  // namespace
}  // namespace emlab
