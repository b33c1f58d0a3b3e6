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

#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "emlab/dataio.hpp"
#include "emlab/encoder.hpp"

namespace emlab {

/// Row-major [rows x dim] block of embeddings.
struct EmbeddingMatrix {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<double> values;

  std::span<const double> row(std::size_t i) const { return {values.data() + i * dim, dim}; }
};

/// Anything that maps texts to fixed-size vectors.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::string name() const = 0;
  virtual EmbeddingMatrix embed(const std::vector<std::string>& texts) const = 0;
};

/// Embeds with a trained (or untrained) encoder.
class EncoderEmbedder final : public Embedder {
 public:
  EncoderEmbedder(std::string name, std::shared_ptr<const Encoder> encoder)
      : name_(std::move(name)), encoder_(std::move(encoder)) {}
  std::string name() const override { return name_; }
  EmbeddingMatrix embed(const std::vector<std::string>& texts) const override;

 private:
  std::string name_;
  std::shared_ptr<const Encoder> encoder_;
};

/// Hashed bag of whitespace-separated words. Needs no training, which makes
/// it the bootstrap teacher before any checkpoint exists.
class LexicalEmbedder final : public Embedder {
 public:
  explicit LexicalEmbedder(std::size_t dim = 4096) : dim_(dim) {}
  std::string name() const override { return "lexical"; }
  EmbeddingMatrix embed(const std::vector<std::string>& texts) const override;

 private:
  std::size_t dim_;
};

struct MiningConfig {
  std::size_t k = 1;
  double percent_threshold = 0.95;
  std::vector<std::shared_ptr<const Embedder>> teachers;

  /// Throws ConfigError. `need_teachers` is false for the similarity-level API.
  void validate(bool need_teachers = true) const;
};

struct MinedNegative {
  std::size_t corpus_id = 0;
  double similarity = 0.0;

  bool operator==(const MinedNegative&) const = default;
};

using MinedNegatives = std::vector<MinedNegative>;

/// Core selection rule on precomputed similarities: candidates with
/// sim < percent_threshold * positive_sim, excluding `positive_id`, ordered
/// by similarity descending then id ascending, truncated to k.
MinedNegatives select_negatives(double positive_sim, std::span<const double> sims, std::size_t positive_id,
                                std::size_t k, double percent_threshold);

/// `positive_id` indexes `corpus`; the positive document is corpus[positive_id].
MinedNegatives mine(const std::string& query, std::size_t positive_id, const std::vector<std::string>& corpus,
                    const Embedder& teacher, const MiningConfig& config);

/// Round-robin interleave of per-teacher lists, first occurrence wins, then
/// truncation to k.
MinedNegatives interleave_dedup(const std::vector<MinedNegatives>& per_teacher, std::size_t k);

MinedNegatives mine_ensemble(const std::string& query, std::size_t positive_id,
                             const std::vector<std::string>& corpus, const MiningConfig& config);

struct MiningResult {
  std::vector<RawExample> examples;
  /// Indices of mineable examples that received no negative at all.
  std::vector<std::size_t> flagged;
};

/// Texts the examples' negatives are drawn from when no explicit pool is
/// given: every distinct positive-side text, in first-seen order.
std::vector<std::string> default_mining_pool(const std::vector<RawExample>& examples);

/// Replaces the negatives of every retrieval, STS and bitext example with
/// mined corpus texts. Classification examples pass through unchanged.
MiningResult mine_dataset(const std::vector<RawExample>& examples, const std::vector<std::string>& corpus,
                          const MiningConfig& config);

}  // namespace emlab
