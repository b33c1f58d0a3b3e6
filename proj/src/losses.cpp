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

#include "emlab/losses.hpp"

#include "emlab/errors.hpp"

namespace emlab {

std::string to_string(LossVariant v) {
  switch (v) {
    case LossVariant::kHnOnly:
      return "hn_only";
    case LossVariant::kGecko:
      return "gecko";
    case LossVariant::kQwen3:
      return "qwen3";
    case LossVariant::kGemini:
      return "gemini";
  }
  return "hn_only";
}

LossVariant parse_loss_variant(std::string_view text) {
  for (auto v : kAllLossVariants)
    if (to_string(v) == text) return v;
  throw ConfigError("unknown loss variant '" + std::string(text) + "'");
}

void LossConfig::validate() const {
  if (!(temperature > 0.0)) throw ConfigError("loss temperature must be positive");
}

void ContrastiveBatch::validate() const {
  if (!queries.defined() || !positives.defined()) throw ContractError("contrastive batch is missing embeddings");
  if (queries.rank() != 2 || positives.shape() != queries.shape())
    throw DimensionError("queries and positives must both be [B x d]");
  const std::size_t b = queries.dim(0);
  if (negative_offsets.size() != b + 1 || negative_offsets.front() != 0)
    throw DimensionError("negative_offsets must have B + 1 entries starting at 0");
  for (std::size_t i = 0; i < b; ++i)
    if (negative_offsets[i + 1] < negative_offsets[i]) throw DimensionError("negative_offsets must be non-decreasing");
  const std::size_t n = negative_offsets.back();
  if (n == 0) return;
  if (!negatives.defined() || negatives.rank() != 2 || negatives.dim(0) != n ||
      negatives.dim(1) != queries.dim(1))
    throw DimensionError("negatives must be [N x d] with N = " + std::to_string(n));
}

ContrastiveBatch ContrastiveBatch::with_uniform_negatives(Tensor queries, Tensor positives,
                                                          Tensor negatives, std::size_t per_row) {
  ContrastiveBatch batch{std::move(queries), std::move(positives), std::move(negatives), {}};
  const std::size_t b = batch.queries.dim(0);
  for (std::size_t i = 0; i <= b; ++i) batch.negative_offsets.push_back(i * per_row);
  batch.validate();
  return batch;
}

std::vector<CandidateRef> denominator_set(LossVariant variant, const ContrastiveBatch& batch,
                                          std::size_t row) {
  const std::size_t b = batch.rows();
  if (row >= b) throw ContractError("denominator_set: row out of range");
  const auto& off = batch.negative_offsets;
  std::vector<CandidateRef> set{{CandidateKind::kPositive, row}};
  for (std::size_t t = off[row]; t < off[row + 1]; ++t) set.push_back({CandidateKind::kNegative, t});
  if (variant == LossVariant::kHnOnly) return set;
  for (std::size_t j = 0; j < b; ++j)
    if (j != row) set.push_back({CandidateKind::kPositive, j});
  if (variant == LossVariant::kGemini) return set;
  for (std::size_t j = 0; j < b; ++j)
    if (j != row) set.push_back({CandidateKind::kQuery, j});
  if (variant == LossVariant::kGecko) return set;
  for (std::size_t j = 0; j < b; ++j)
    if (j != row)
      for (std::size_t t = off[j]; t < off[j + 1]; ++t) set.push_back({CandidateKind::kNegative, t});
  return set;
}

namespace {

Tensor stacked(const std::vector<Tensor>& vectors) {
  std::vector<Tensor> rows;
  rows.reserve(vectors.size());
  for (const auto& v : vectors) {
    if (v.rank() != 1) throw DimensionError("candidates must be vectors");
    rows.push_back(reshape(v, {1, v.dim(0)}));
  }
  return concat_rows(rows);
}

Tensor similarity_row(const Tensor& query, const std::vector<Tensor>& candidates) {
  if (candidates.empty()) throw EmptyInputError("no candidates");
  if (query.rank() != 1) throw DimensionError("query must be a vector");
  const auto q = l2_normalize_rows(reshape(query, {1, query.dim(0)}));
  const auto c = l2_normalize_rows(stacked(candidates));
  return matmul(q, transpose(c));
}

// Columns of the batch similarity matrix: [positives | queries | negatives].
std::size_t column_of(const CandidateRef& ref, std::size_t b) {
  switch (ref.kind) {
    case CandidateKind::kPositive:
      return ref.index;
    case CandidateKind::kQuery:
      return b + ref.index;
    case CandidateKind::kNegative:
      return 2 * b + ref.index;
  }
  return 0;
}

Tensor batch_similarities(const ContrastiveBatch& batch) {
  std::vector<Tensor> parts{batch.positives, batch.queries};
  if (batch.negative_offsets.back() > 0) parts.push_back(batch.negatives);
  const auto all = l2_normalize_rows(concat_rows(parts));
  const std::size_t b = batch.rows();
  std::vector<std::size_t> query_rows(b);
  for (std::size_t i = 0; i < b; ++i) query_rows[i] = b + i;
  return matmul(gather_rows(all, query_rows), transpose(all));
}

std::vector<ContrastiveRow> batch_rows(const ContrastiveBatch& batch, LossVariant variant) {
  const std::size_t b = batch.rows();
  std::vector<ContrastiveRow> rows(b);
  for (std::size_t i = 0; i < b; ++i) {
    rows[i].sim_row = i;
    for (const auto& ref : denominator_set(variant, batch, i)) rows[i].columns.push_back(column_of(ref, b));
  }
  return rows;
}

}  // namespace

std::vector<double> row_logits(const Tensor& query, const std::vector<Tensor>& candidates,
                               double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  NoGradGuard no_grad;
  const auto sims = similarity_row(query, candidates);
  std::vector<double> logits;
  for (double s : sims.data()) logits.push_back(s / temperature);
  return logits;
}

Tensor infonce_row(const Tensor& query, const std::vector<Tensor>& candidates,
                   std::size_t positive_index, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (positive_index >= candidates.size()) throw ContractError("positive index outside the candidate list");
  ContrastiveRow row{0, {positive_index}};
  for (std::size_t c = 0; c < candidates.size(); ++c)
    if (c != positive_index) row.columns.push_back(c);
  return contrastive_loss(similarity_row(query, candidates), {row}, temperature);
}

Tensor loss_batch(const ContrastiveBatch& batch, const LossConfig& config) {
  config.validate();
  batch.validate();
  return contrastive_loss(batch_similarities(batch), batch_rows(batch, config.variant), config.temperature);
}

std::vector<double> row_losses(const ContrastiveBatch& batch, const LossConfig& config) {
  config.validate();
  batch.validate();
  NoGradGuard no_grad;
  const auto sims = batch_similarities(batch);
  const std::size_t cols = sims.dim(1);
  std::vector<double> out;
  for (const auto& row : batch_rows(batch, config.variant)) {
    std::vector<double> logits;
    for (auto c : row.columns) logits.push_back(sims.data()[row.sim_row * cols + c] / config.temperature);
    out.push_back(infonce_from_logits(logits));
  }
  return out;
}

}  // namespace emlab
