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

#include <algorithm>
#include <cmath>
#include <random>

#include "emlab/encoder.hpp"
#include "emlab/errors.hpp"
#include "gradcheck.hpp"

namespace emlab {
namespace {

EncoderConfig small_config(AttentionMode mode, std::uint64_t seed = 1) {
  EncoderConfig c;
  c.n_layers = 2;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_ff = 24;
  c.max_seq_len = 64;
  c.attention_mode = mode;
  c.seed = seed;
  return c;
}

std::vector<std::size_t> random_tokens(std::mt19937_64& rng, std::size_t len) {
  std::uniform_int_distribution<std::size_t> byte(0, 255);
  std::vector<std::size_t> t(len);
  for (auto& x : t) x = byte(rng);
  return t;
}

TEST(RenderInput, InstructionTemplate) {
  EXPECT_EQ(render_input({"Given a web search query, retrieve relevant passages", "what is rope"}),
            "Instruct: Given a web search query, retrieve relevant passages\nQuery: what is rope");
  EXPECT_EQ(render_input({std::nullopt, "some passage"}), "some passage");
  EXPECT_EQ(render_input({"", "t"}), "Instruct: \nQuery: t");
}

TEST(RenderInput, ParseIsExactInverse) {
  std::mt19937_64 rng(9);
  const std::string alphabet = "ab Q:\nIx.";
  std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1), len(0, 12);
  auto text = [&] {
    std::string s(len(rng), ' ');
    for (auto& ch : s) ch = alphabet[pick(rng)];
    return s;
  };
  for (int i = 0; i < 500; ++i) {
    std::string instruction = text();
    // Instructions containing the separator are ambiguous by construction.
    if (instruction.find("\nQuery: ") != std::string::npos) continue;
    std::string body = text();
    if (body.starts_with("Instruct: ")) continue;
    InstructedInput with{instruction, body};
    EXPECT_EQ(parse_rendered(render_input(with)), with);
    InstructedInput without{std::nullopt, body};
    EXPECT_EQ(parse_rendered(render_input(without)), without);
  }
}

TEST(Tokenize, ByteIdentityAndSpecials) {
  EXPECT_EQ(tokenize("", 512), (std::vector<std::size_t>{kBosToken, kEosToken}));
  EXPECT_EQ(tokenize("AB", 512), (std::vector<std::size_t>{kBosToken, 65, 66, kEosToken}));
  const auto utf8 = tokenize("\xc3\xa9", 512);
  EXPECT_EQ(utf8, (std::vector<std::size_t>{kBosToken, 0xc3, 0xa9, kEosToken}));
}

TEST(Tokenize, TruncatesToMaxLength) {
  const std::string longtext(10000, 'x');
  const auto ids = tokenize(longtext, 512);
  EXPECT_EQ(ids.size(), 512u);
  EXPECT_EQ(ids.front(), kBosToken);
  EXPECT_EQ(ids.back(), kEosToken);
  EXPECT_EQ(tokenize(longtext, 1).size(), 1u);
}

TEST(EncoderConfig, Validation) {
  auto c = small_config(AttentionMode::kBidirectional);
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config(AttentionMode::kBidirectional);
  c.vocab_size = 100;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_EQ(EncoderConfig::llama_8b_reference().d_model, 4096u);
}

TEST(EncoderConfig, JsonRoundTrip) {
  auto c = small_config(AttentionMode::kCausal, 77);
  nlohmann::json j = c;
  EXPECT_EQ(j.get<EncoderConfig>(), c);
}

TEST(Encoder, RejectsEmptyAndOverlongSequences) {
  Encoder enc(small_config(AttentionMode::kBidirectional));
  EXPECT_THROW(enc.encode(std::vector<std::size_t>{}), EmptyInputError);
  EXPECT_THROW(enc.encode(std::vector<std::size_t>(65, 1)), DimensionError);
}

TEST(Encoder, CausalPrefixInvariance) {
  Encoder enc(small_config(AttentionMode::kCausal));
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    auto tokens = random_tokens(rng, 12);
    const auto base = enc.encode(tokens);
    for (std::size_t changed = 1; changed < tokens.size(); ++changed) {
      auto other = tokens;
      other[changed] = (other[changed] + 1 + trial) % 256;
      const auto h = enc.encode(other);
      for (std::size_t pos = 0; pos < changed; ++pos)
        for (std::size_t j = 0; j < 16; ++j) ASSERT_EQ(h.at(pos, j), base.at(pos, j));
    }
  }
}

TEST(Encoder, BidirectionalSeesTheSuffix) {
  Encoder enc(small_config(AttentionMode::kBidirectional));
  std::mt19937_64 rng(5);
  auto tokens = random_tokens(rng, 10);
  const auto base = enc.encode(tokens);
  tokens.back() = (tokens.back() + 17) % 256;
  const auto h = enc.encode(tokens);
  double diff = 0.0;
  for (std::size_t j = 0; j < 16; ++j) diff = std::max(diff, std::abs(h.at(0, j) - base.at(0, j)));
  EXPECT_GT(diff, 1e-8);
}

TEST(Encoder, SingleTokenModesAgree) {
  Encoder causal(small_config(AttentionMode::kCausal, 3));
  Encoder bidir(small_config(AttentionMode::kBidirectional, 3));
  const std::vector<std::size_t> tok{kBosToken};
  const auto a = causal.encode(tok), b = bidir.encode(tok);
  for (std::size_t j = 0; j < 16; ++j) EXPECT_EQ(a.at(0, j), b.at(0, j));
}

TEST(Encoder, ZeroFinalGainGivesZeroEmbedding) {
  Encoder enc(small_config(AttentionMode::kBidirectional));
  for (auto& g : enc.parameter("final_norm").mutable_data()) g = 0.0;
  const auto v = enc.embed({std::nullopt, "anything"});
  for (double x : v.values) EXPECT_EQ(x, 0.0);
}

TEST(Encoder, DeterministicAndSelfSimilar) {
  Encoder a(small_config(AttentionMode::kBidirectional, 12));
  Encoder b(small_config(AttentionMode::kBidirectional, 12));
  const InstructedInput in{"Retrieve semantically similar text.", "a cat sat"};
  const auto va = a.embed(in), vb = b.embed(in);
  EXPECT_EQ(va.values, vb.values);
  const auto t = Tensor::vector(va.values);
  EXPECT_NEAR(cosine_sim(t, t).item(), 1.0, 1e-15);
}

TEST(Encoder, BatchedEmbeddingEqualsSingle) {
  Encoder enc(small_config(AttentionMode::kBidirectional));
  const std::vector<std::string> texts{"alpha", "be", "gamma delta"};
  const auto batch = enc.embed_all(texts);
  for (std::size_t i = 0; i < texts.size(); ++i)
    EXPECT_EQ(batch[i].values, enc.embed({std::nullopt, texts[i]}).values);
}

TEST(Encoder, PoolingIncludesSpecialTokens) {
  // BOS/EOS take part in the mean; dropping them changes the embedding.
  Encoder enc(small_config(AttentionMode::kBidirectional));
  NoGradGuard guard;
  const auto ids = tokenize("abc", 64);
  const auto hidden = enc.encode(ids);
  const auto with = mean_over_axis(hidden, 0);
  const auto pooled = enc.embed_token_batch({ids});
  for (std::size_t j = 0; j < 16; ++j) EXPECT_EQ(pooled.at(0, j), with.at(j));
  const std::vector<std::size_t> inner(ids.begin() + 1, ids.end() - 1);
  const auto without = enc.embed_token_batch({inner});
  double diff = 0.0;
  for (std::size_t j = 0; j < 16; ++j) diff = std::max(diff, std::abs(without.at(0, j) - with.at(j)));
  EXPECT_GT(diff, 1e-6);
}

TEST(Encoder, AssemblyChecksNamesAndShapes) {
  Encoder enc(small_config(AttentionMode::kBidirectional));
  auto params = enc.clone().parameters();
  params[3].name = "bogus";
  EXPECT_THROW(Encoder(enc.config(), params), ValidationError);
}

TEST(Encoder, GradientsMatchFiniteDifferences) {
  set_validation(true);
  for (auto mode : {AttentionMode::kCausal, AttentionMode::kBidirectional}) {
    Encoder enc(small_config(mode, 21));
    std::mt19937_64 rng(2);
    auto weights = testing::random_tensor({2, 16}, rng, false);
    const std::vector<std::vector<std::size_t>> seqs{{kBosToken, 3, 9, 4, kEosToken}, {kBosToken, 9, kEosToken}};
    std::vector<Tensor> leaves;
    for (auto& p : enc.parameters()) leaves.push_back(p.value);
    const auto r = testing::grad_check([&] { return sum(mul(enc.embed_token_batch(seqs), weights)); }, leaves,
                                       1e-5, 6);
    EXPECT_LE(r.max_rel_err, 1e-4) << to_string(mode);
  }
  set_validation(false);
}

}  // namespace
}  // namespace emlab
