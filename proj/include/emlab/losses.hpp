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

// InfoNCE over cosine similarities with four denominator compositions:
//
//   hn_only : {d+_i} + own hard negatives
//   gemini  : hn_only + positives of the other rows (in-batch negatives)
//   gecko   : gemini + queries of the other rows (same-tower negatives)
//   qwen3   : gecko + hard negatives of the other rows
//
// Each composition is a superset of the previous one, so for a fixed batch the
// row losses are ordered qwen3 >= gecko >= gemini >= hn_only.

#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "emlab/tensor.hpp"

namespace emlab {

enum class LossVariant { kHnOnly, kGecko, kQwen3, kGemini };

std::string to_string(LossVariant v);
LossVariant parse_loss_variant(std::string_view text);
inline constexpr LossVariant kAllLossVariants[] = {LossVariant::kHnOnly, LossVariant::kGemini,
                                                   LossVariant::kGecko, LossVariant::kQwen3};

struct LossConfig {
  double temperature = 0.02;
  LossVariant variant = LossVariant::kHnOnly;

  void validate() const;
};

/// Query, positive and hard-negative embeddings for B rows. Row i owns the
/// negative rows [negative_offsets[i], negative_offsets[i+1]).
struct ContrastiveBatch {
  Tensor queries;    // [B x d]
  Tensor positives;  // [B x d]
  Tensor negatives;  // [N x d], undefined when N == 0
  std::vector<std::size_t> negative_offsets;

  std::size_t rows() const { return queries.dim(0); }
  void validate() const;

  /// Every row owns `per_row` consecutive rows of `negatives`.
  static ContrastiveBatch with_uniform_negatives(Tensor queries, Tensor positives, Tensor negatives,
                                                 std::size_t per_row);
};

enum class CandidateKind { kPositive, kQuery, kNegative };

struct CandidateRef {
  CandidateKind kind;
  std::size_t index;  // row within the positives / queries / negatives tensor

  bool operator==(const CandidateRef&) const = default;
};

/// Denominator members for one row, positive first, then own negatives, then
/// other rows' positives, queries and negatives as the variant admits.
std::vector<CandidateRef> denominator_set(LossVariant variant, const ContrastiveBatch& batch,
                                          std::size_t row);

/// sim(q, c) / temperature for every candidate, in order.
std::vector<double> row_logits(const Tensor& query, const std::vector<Tensor>& candidates,
                               double temperature);

/// Single-row InfoNCE; candidates[positive_index] is d+.
Tensor infonce_row(const Tensor& query, const std::vector<Tensor>& candidates,
                   std::size_t positive_index, double temperature);

/// Mean row loss under the configured variant; differentiable.
Tensor loss_batch(const ContrastiveBatch& batch, const LossConfig& config);

/// Per-row losses without recording a tape.
std::vector<double> row_losses(const ContrastiveBatch& batch, const LossConfig& config);

}  // namespace emlab
