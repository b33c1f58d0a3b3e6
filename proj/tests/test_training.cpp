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

#include <cmath>
#include <filesystem>
#include <limits>
#include <random>

#include "emlab/errors.hpp"
#include "emlab/training.hpp"

namespace emlab {
namespace {

EncoderConfig tiny_config(std::uint64_t seed = 3) {
  EncoderConfig c;
  c.n_layers = 1;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_ff = 32;
  c.max_seq_len = 64;
  c.seed = seed;
  return c;
}

StageConfig tiny_stage(std::size_t steps, std::size_t negatives = 1) {
  StageConfig s = StageConfig::desk_pretrain();
  s.batch_size = 3;
  s.n_steps = steps;
  s.warmup_steps = std::min<std::size_t>(2, steps);
  s.n_hard_negatives = negatives;
  s.peak_lr = 5e-3;
  s.seed = 9;
  return s;
}

std::vector<TrainingTriplet> tiny_rows() {
  return {
      {"q: red apple", "red apple pie", {"blue sky", "green tea"}},
      {"q: blue sky", "blue sky above", {"red apple", "green tea"}},
      {"q: green tea", "green tea leaf", {"blue sky", "red apple"}},
      {"q: black cat", "black cat naps", {"white dog", "red apple"}},
      {"q: white dog", "white dog runs", {"black cat", "blue sky"}},
      {"q: gold ring", "gold ring shine", {"white dog", "green tea"}},
  };
}

// ---- schedule --------------------------------------------------------------

TEST(LearningRate, WarmupMidpoint) {
  StageConfig c;
  c.peak_lr = 1e-5;
  c.warmup_steps = 100;
  c.n_steps = 1000;
  EXPECT_DOUBLE_EQ(lr_at(50, c), 5e-6);
  EXPECT_EQ(lr_at(100, c), 1e-5);
  EXPECT_EQ(lr_at(1000, c), 0.0);
  EXPECT_EQ(lr_at(0, c), 0.0);
  EXPECT_THROW(lr_at(1001, c), ContractError);
}

TEST(LearningRate, PiecewiseLinearWithPeakAtWarmup) {
  const auto c = StageConfig::paper_pretrain();
  double best = 0.0;
  std::size_t arg = 0;
  for (std::size_t s = 0; s <= c.n_steps; ++s) {
    const double v = lr_at(s, c);
    if (v > best) {
      best = v;
      arg = s;
    }
    if (s > 0 && s < c.n_steps && s != c.warmup_steps) {
      // second difference vanishes away from the kink
      const double curve = lr_at(s - 1, c) - 2 * v + lr_at(s + 1, c);
      EXPECT_NEAR(curve, 0.0, 1e-18) << s;
    }
  }
  EXPECT_EQ(best, c.peak_lr);
  EXPECT_EQ(arg, c.warmup_steps);
}

TEST(LearningRate, NoWarmup) {
  StageConfig c;
  c.peak_lr = 2.0;
  c.warmup_steps = 0;
  c.n_steps = 4;
  EXPECT_EQ(lr_at(0, c), 2.0);
  EXPECT_EQ(lr_at(2, c), 1.0);
}

TEST(StageConfigs, PresetsAndValidation) {
  const auto p = StageConfig::paper_pretrain();
  EXPECT_EQ(p.peak_lr, 1e-5);
  EXPECT_EQ(p.batch_size, 2048u);
  EXPECT_EQ(p.n_steps, 5773u);
  EXPECT_EQ(p.n_hard_negatives, 1u);
  const auto f = StageConfig::paper_finetune();
  EXPECT_EQ(f.peak_lr, 2e-6);
  EXPECT_EQ(f.batch_size, 128u);
  EXPECT_EQ(f.n_steps, 33668u);
  EXPECT_EQ(f.n_hard_negatives, 4u);
  EXPECT_EQ(f.temperature, 0.02);
  for (const auto& c : {p, f, StageConfig::desk_pretrain(), StageConfig::desk_finetune()}) {
    EXPECT_NO_THROW(c.validate());
    nlohmann::json j = c;
    EXPECT_EQ(j.get<StageConfig>(), c);
  }
  auto bad = p;
  bad.warmup_steps = bad.n_steps + 1;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = p;
  bad.peak_lr = 0.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = p;
  bad.n_hard_negatives = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

// ---- optimizer -------------------------------------------------------------

TEST(AdamW, FirstStepMovesByLr) {
  std::vector<double> theta{0.0}, m{0.0}, v{0.0};
  const std::vector<double> g{1.0};
  adamw_update(theta, g, m, v, 1, 0.1, 0.0, 0.9, 0.999, 1e-8);
  // m_hat = v_hat = 1, so the step is lr / (1 + eps)
  EXPECT_NEAR(theta[0], -0.1 / (1.0 + 1e-8), 1e-17);
  EXPECT_NEAR(theta[0], -0.1, 1e-8);
}

TEST(AdamW, PureDecay) {
  std::vector<double> theta{2.5, -1.0}, m{0.0, 0.0}, v{0.0, 0.0};
  const std::vector<double> g{0.0, 0.0};
  adamw_update(theta, g, m, v, 1, 0.1, 0.01, 0.9, 0.999, 1e-8);
  EXPECT_DOUBLE_EQ(theta[0], 2.5 * (1 - 0.1 * 0.01));
  EXPECT_DOUBLE_EQ(theta[1], -1.0 * (1 - 0.1 * 0.01));
}

TEST(AdamW, MatchesReferenceOverSteps) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g01;
  std::vector<double> theta(5), m(5, 0.0), v(5, 0.0);
  for (auto& x : theta) x = g01(rng);
  auto ref = theta;
  std::vector<double> rm(5, 0.0), rv(5, 0.0);
  for (std::size_t t = 1; t <= 10; ++t) {
    std::vector<double> g(5);
    for (auto& x : g) x = g01(rng);
    adamw_update(theta, g, m, v, t, 1e-2, 0.1, 0.9, 0.999, 1e-8);
    for (std::size_t i = 0; i < 5; ++i) {
      rm[i] = 0.9 * rm[i] + 0.1 * g[i];
      rv[i] = 0.999 * rv[i] + 0.001 * g[i] * g[i];
      const double mh = rm[i] / (1 - std::pow(0.9, t));
      const double vh = rv[i] / (1 - std::pow(0.999, t));
      ref[i] = ref[i] - 1e-2 * (mh / (std::sqrt(vh) + 1e-8) + 0.1 * ref[i]);
    }
  }
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(theta[i], ref[i], 1e-14);
}

TEST(AdamW, ShapeMismatchIsContractError) {
  std::vector<double> theta{0.0, 1.0}, m{0.0}, v{0.0, 0.0};
  const std::vector<double> g{1.0, 1.0};
  EXPECT_THROW(adamw_update(theta, g, m, v, 1, 0.1, 0.0, 0.9, 0.999, 1e-8), ContractError);
  Encoder enc(tiny_config());
  OptimizerState state;
  EXPECT_THROW(adamw_step(enc.parameters(), state, 0.1, 0.0), ContractError);
}

TEST(AdamW, ParametersWithoutGradientOnlyDecay) {
  Encoder enc(tiny_config());
  auto state = OptimizerState::for_parameters(enc.parameters());
  const auto before = enc.parameter("final_norm").data()[0];
  adamw_step(enc.parameters(), state, 0.1, 0.5);
  EXPECT_DOUBLE_EQ(enc.parameter("final_norm").data()[0], before * (1 - 0.05));
  EXPECT_EQ(state.step, 1u);
}

// ---- checkpoints -----------------------------------------------------------

TEST(CheckpointFile, RoundTripIsByteIdentical) {
  Encoder enc(tiny_config());
  const auto ck = Checkpoint::from_encoder(enc, {{"stage", "pretrain"}, {"step", 7}});
  const auto bytes = serialize_checkpoint(ck);
  const auto back = parse_checkpoint(bytes);
  EXPECT_EQ(back, ck);
  EXPECT_EQ(serialize_checkpoint(back), bytes);

  const auto dir = std::filesystem::temp_directory_path() / "emlab_ckpt_roundtrip";
  std::filesystem::create_directories(dir);
  save_checkpoint(dir / "a.emlb", ck);
  save_checkpoint(dir / "b.emlb", load_checkpoint(dir / "a.emlb"));
  EXPECT_EQ(load_checkpoint(dir / "b.emlb"), ck);
  std::filesystem::remove_all(dir);
}

TEST(CheckpointFile, HeaderLayout) {
  const auto bytes = serialize_checkpoint(Checkpoint::from_encoder(Encoder(tiny_config())));
  ASSERT_GT(bytes.size(), 16u);
  EXPECT_EQ(bytes.substr(0, 4), "EMLB");
  EXPECT_EQ(bytes.substr(4, 4), std::string("\x01\x00\x00\x00", 4));
}

TEST(CheckpointFile, EncoderRoundTripPreservesEmbeddings) {
  Encoder enc(tiny_config());
  const auto copy = Checkpoint::from_encoder(enc).to_encoder();
  const auto a = enc.embed_all({"hello there"});
  const auto b = copy.embed_all({"hello there"});
  EXPECT_EQ(a[0].values, b[0].values);
}

TEST(CheckpointFile, RejectsCorruption) {
  const auto bytes = serialize_checkpoint(Checkpoint::from_encoder(Encoder(tiny_config())));
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(parse_checkpoint(bad), ValidationError);
  bad = bytes;
  bad[4] = 9;
  EXPECT_THROW(parse_checkpoint(bad), ValidationError);
  EXPECT_THROW(parse_checkpoint(bytes.substr(0, bytes.size() - 3)), ValidationError);
  EXPECT_THROW(parse_checkpoint(bytes + "x"), ValidationError);

  auto ck = Checkpoint::from_encoder(Encoder(tiny_config()));
  ck.parameters[1].shape = {1, 1};
  ck.parameters[1].values = {0.0};
  EXPECT_THROW(parse_checkpoint(serialize_checkpoint(ck)), ValidationError);
}

// ---- merging ---------------------------------------------------------------

Checkpoint constant_checkpoint(double value) {
  auto ck = Checkpoint::from_encoder(Encoder(tiny_config()));
  for (auto& p : ck.parameters) std::fill(p.values.begin(), p.values.end(), value);
  return ck;
}

Checkpoint random_checkpoint(std::uint64_t seed) { return Checkpoint::from_encoder(Encoder(tiny_config(seed))); }

double max_diff(const Checkpoint& a, const Checkpoint& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.parameters.size(); ++i)
    for (std::size_t k = 0; k < a.parameters[i].values.size(); ++k)
      d = std::max(d, std::abs(a.parameters[i].values[k] - b.parameters[i].values[k]));
  return d;
}

TEST(Merge, TwoIdenticalAreUnchanged) {
  const auto a = random_checkpoint(1);
  const auto m = merge_checkpoints({a, a});
  EXPECT_EQ(m.parameters, a.parameters);
}

TEST(Merge, CopiesWithinOneUlp) {
  const auto a = random_checkpoint(2);
  for (const std::size_t n : {3u, 5u, 6u}) {
    const auto m = merge_checkpoints(std::vector<Checkpoint>(n, a));
    for (std::size_t i = 0; i < a.parameters.size(); ++i) {
      for (std::size_t k = 0; k < a.parameters[i].values.size(); ++k) {
        const double x = a.parameters[i].values[k];
        const double y = m.parameters[i].values[k];
        EXPECT_LE(std::abs(x - y), std::abs(std::nextafter(x, 2 * x + 1) - x)) << n;
      }
    }
  }
}

TEST(Merge, SimpleAverages) {
  EXPECT_EQ(merge_checkpoints({constant_checkpoint(0.0), constant_checkpoint(1.0)}).parameters[0].values[0], 0.5);
  std::vector<Checkpoint> six;
  for (int v = 1; v <= 6; ++v) six.push_back(constant_checkpoint(v));
  const auto m = merge_checkpoints(six);
  for (const auto& p : m.parameters)
    for (const double x : p.values) EXPECT_NEAR(x, 3.5, 1e-12);
  EXPECT_EQ(m.metadata.at("merge").at("sources").size(), 6u);
  EXPECT_EQ(m.metadata.at("merge").at("sources")[2], checkpoint_hash(six[2]));
}

TEST(Merge, PermutationInvariant) {
  const auto a = random_checkpoint(1), b = random_checkpoint(2), c = random_checkpoint(3);
  const auto abc = merge_checkpoints({a, b, c}, {0.5, 0.3, 0.2});
  const auto cab = merge_checkpoints({c, a, b}, {0.2, 0.5, 0.3});
  EXPECT_LE(max_diff(abc, cab), 1e-12);
}

TEST(Merge, WeightedMeanAssociativity) {
  const auto a = random_checkpoint(4), b = random_checkpoint(5), c = random_checkpoint(6);
  const auto nested = merge_checkpoints({merge_checkpoints({a, b}), c}, {2.0 / 3.0, 1.0 / 3.0});
  const auto flat = merge_checkpoints({a, b, c});
  EXPECT_LE(max_diff(nested, flat), 1e-12);
}

TEST(Merge, RejectsBadInputs) {
  const auto a = random_checkpoint(1);
  EXPECT_THROW(merge_checkpoints({a}), ValidationError);
  EXPECT_THROW(merge_checkpoints({a, a}, {0.5, 0.6}), ValidationError);
  EXPECT_THROW(merge_checkpoints({a, a}, {1.5, -0.5}), ValidationError);
  EXPECT_THROW(merge_checkpoints({a, a}, {1.0}), ValidationError);
  auto renamed = a;
  renamed.parameters[2].name = "layers.0.other";
  try {
    merge_checkpoints({a, renamed});
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find(a.parameters[2].name), std::string::npos);
  }
  auto wider = tiny_config();
  wider.d_ff = 48;
  try {
    merge_checkpoints({a, Checkpoint::from_encoder(Encoder(wider))});
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("layers.0.w_gate"), std::string::npos) << e.what();
  }
  auto deeper = tiny_config();
  deeper.n_layers = 2;
  EXPECT_THROW(merge_checkpoints({a, Checkpoint::from_encoder(Encoder(deeper))}), ValidationError);
  auto other = a;
  other.config.rope_base = 500.0;
  EXPECT_THROW(merge_checkpoints({a, other}), ValidationError);
}

// ---- training loop ---------------------------------------------------------

TEST(TrainStage, ZeroStepsKeepsInitialization) {
  Encoder model(tiny_config());
  const auto init = Checkpoint::from_encoder(model);
  const auto result = train_stage(model, tiny_rows(), tiny_stage(0));
  EXPECT_EQ(result.checkpoint.parameters, init.parameters);
  EXPECT_TRUE(result.loss_trace.empty());
}

TEST(TrainStage, SerialRunsAreIdentical) {
  Encoder a(tiny_config()), b(tiny_config());
  const auto ra = train_stage(a, tiny_rows(), tiny_stage(6));
  const auto rb = train_stage(b, tiny_rows(), tiny_stage(6));
  EXPECT_EQ(ra.loss_trace, rb.loss_trace);
  EXPECT_EQ(serialize_checkpoint(ra.checkpoint), serialize_checkpoint(rb.checkpoint));
  EXPECT_EQ(ra.loss_trace.size(), 6u);
}

TEST(TrainStage, LossFallsOnSmallProblem) {
  Encoder model(tiny_config());
  auto cfg = tiny_stage(40, 2);
  cfg.batch_size = 6;
  cfg.peak_lr = 1e-2;
  const auto r = train_stage(model, tiny_rows(), cfg);
  const double head = (r.loss_trace[0] + r.loss_trace[1] + r.loss_trace[2]) / 3;
  const double tail = (r.loss_trace[37] + r.loss_trace[38] + r.loss_trace[39]) / 3;
  EXPECT_LT(tail, 0.5 * head);
}

TEST(TrainStage, RejectsRowsWithTooFewNegatives) {
  auto rows = tiny_rows();
  rows[0].negative_texts.resize(1);
  Encoder model(tiny_config());
  const auto r = train_stage(model, rows, tiny_stage(1, 2));
  EXPECT_EQ(r.rejected_rows, 1u);
  rows.resize(3);
  EXPECT_THROW(train_stage(model, rows, tiny_stage(1, 2)), ValidationError);
}

TEST(TrainStage, NonFiniteLossReportsStep) {
  Encoder model(tiny_config());
  model.parameter("final_norm").mutable_data()[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    train_stage(model, tiny_rows(), tiny_stage(3));
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("step 1"), std::string::npos);
  }
}

TEST(TrainStage, MetadataRecordsStage) {
  Encoder model(tiny_config());
  const auto r = train_stage(model, tiny_rows(), tiny_stage(2));
  EXPECT_EQ(r.checkpoint.metadata.at("stage"), "pretrain");
  EXPECT_EQ(r.checkpoint.metadata.at("step"), 2);
}

TEST(StageRows, PretrainKeepsRetrievalOnly) {
  RawExample ret;
  ret.family = TaskFamily::kRetrieval;
  ret.instruction = "i";
  ret.query = "q";
  ret.positive = "p";
  ret.negatives = {"n"};
  RawExample st;
  st.family = TaskFamily::kSts;
  st.text_a = "a";
  st.text_b = "b";
  EXPECT_EQ(stage_rows({ret, st}, Stage::kPretrain).size(), 1u);
  EXPECT_EQ(stage_rows({ret, st}, Stage::kFinetune).size(), 3u);
  ret.negatives.clear();
  EXPECT_THROW(stage_rows({ret}, Stage::kPretrain), ValidationError);
}

TEST(TwoStage, ZeroStepFinetuneReproducesStageOne) {
  auto fine = tiny_stage(0, 2);
  fine.stage = Stage::kFinetune;
  const auto r = run_two_stage(tiny_config(), tiny_stage(4), tiny_rows(), fine, tiny_rows());
  EXPECT_EQ(r.finetune.checkpoint.parameters, r.pretrain.checkpoint.parameters);
  EXPECT_EQ(r.finetune.checkpoint.metadata.at("parent"), checkpoint_hash(r.pretrain.checkpoint));
  EXPECT_EQ(r.finetune.checkpoint.metadata.at("stage"), "finetune");
}

TEST(TwoStage, RejectsMismatches) {
  auto fine = tiny_stage(1, 2);
  EXPECT_THROW(run_two_stage(tiny_config(), tiny_stage(1), tiny_rows(), fine, tiny_rows()), ValidationError);
  const auto parent = Checkpoint::from_encoder(Encoder(tiny_config()));
  auto other = tiny_config();
  other.d_ff = 48;
  fine.stage = Stage::kFinetune;
  EXPECT_THROW(continue_training(parent, other, tiny_rows(), fine), ValidationError);
}

}  // namespace
}  // namespace emlab
