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

#include "emlab/mining.hpp"

#include <algorithm>
#include <cstdint>
#include <limits>
#include <unordered_map>

#include "emlab/errors.hpp"
#include "emlab/kernels.hpp"

namespace emlab {
namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (const unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::vector<double> cosine_rows(const EmbeddingMatrix& queries, const EmbeddingMatrix& docs) {
  if (queries.dim != docs.dim) throw DimensionError("query and corpus embeddings differ in width");
  std::vector<double> sims(queries.rows * docs.rows);
  kernels::cosine_matrix(queries.rows, docs.rows, docs.dim, queries.values.data(), docs.values.data(),
                         sims.data());
  return sims;
}

bool mineable(const RawExample& ex) { return ex.family != TaskFamily::kClassification; }

}  // namespace

EmbeddingMatrix EncoderEmbedder::embed(const std::vector<std::string>& texts) const {
  const auto rows = encoder_->embed_all(texts);
  EmbeddingMatrix m{texts.size(), encoder_->config().d_model, {}};
  m.values.reserve(m.rows * m.dim);
  for (const auto& r : rows) m.values.insert(m.values.end(), r.values.begin(), r.values.end());
  return m;
}

EmbeddingMatrix LexicalEmbedder::embed(const std::vector<std::string>& texts) const {
  EmbeddingMatrix m{texts.size(), dim_, std::vector<double>(texts.size() * dim_, 0.0)};
  for (std::size_t i = 0; i < texts.size(); ++i) {
    for (const auto& w : split_words(texts[i])) m.values[i * dim_ + fnv1a(w) % dim_] += 1.0;
  }
  return m;
}

void MiningConfig::validate(bool need_teachers) const {
  if (k < 1) throw ConfigError("mining.k must be at least 1");
  if (!(percent_threshold > 0.0 && percent_threshold <= 1.0)) {
    throw ConfigError("mining.percent_threshold must be in (0, 1]");
  }
  if (need_teachers && teachers.empty()) throw ConfigError("mining needs at least one teacher");
  for (const auto& t : teachers) {
    if (!t) throw ConfigError("mining teacher handle is empty");
  }
}

MinedNegatives select_negatives(double positive_sim, std::span<const double> sims, std::size_t positive_id,
                                std::size_t k, double percent_threshold) {
  const double bound = percent_threshold * positive_sim;
  MinedNegatives eligible;
  for (std::size_t id = 0; id < sims.size(); ++id) {
    if (id != positive_id && sims[id] < bound) eligible.push_back({id, sims[id]});
  }
  const auto better = [](const MinedNegative& a, const MinedNegative& b) {
    return a.similarity != b.similarity ? a.similarity > b.similarity : a.corpus_id < b.corpus_id;
  };
  if (eligible.size() > k) {
    std::partial_sort(eligible.begin(), eligible.begin() + static_cast<std::ptrdiff_t>(k), eligible.end(), better);
    eligible.resize(k);
  } else {
    std::sort(eligible.begin(), eligible.end(), better);
  }
  return eligible;
}

MinedNegatives mine(const std::string& query, std::size_t positive_id, const std::vector<std::string>& corpus,
                    const Embedder& teacher, const MiningConfig& config) {
  config.validate(false);
  if (corpus.empty()) throw ValidationError("mining corpus is empty");
  if (positive_id >= corpus.size()) throw ValidationError("positive id outside the corpus");
  const auto q = teacher.embed({query});
  const auto docs = teacher.embed(corpus);
  const auto sims = cosine_rows(q, docs);
  return select_negatives(sims[positive_id], sims, positive_id, config.k, config.percent_threshold);
}

MinedNegatives interleave_dedup(const std::vector<MinedNegatives>& per_teacher, std::size_t k) {
  MinedNegatives out;
  std::vector<std::size_t> seen;
  std::size_t longest = 0;
  for (const auto& l : per_teacher) longest = std::max(longest, l.size());
  for (std::size_t r = 0; r < longest && out.size() < k; ++r) {
    for (const auto& l : per_teacher) {
      if (r >= l.size() || out.size() >= k) continue;
      if (std::find(seen.begin(), seen.end(), l[r].corpus_id) != seen.end()) continue;
      seen.push_back(l[r].corpus_id);
      out.push_back(l[r]);
    }
  }
  return out;
}

MinedNegatives mine_ensemble(const std::string& query, std::size_t positive_id,
                             const std::vector<std::string>& corpus, const MiningConfig& config) {
  config.validate();
  std::vector<MinedNegatives> lists;
  for (const auto& t : config.teachers) lists.push_back(mine(query, positive_id, corpus, *t, config));
  return interleave_dedup(lists, config.k);
}

std::vector<std::string> default_mining_pool(const std::vector<RawExample>& examples) {
  std::vector<std::string> pool;
  std::unordered_map<std::string, std::size_t> seen;
  for (const auto& ex : examples) {
    if (!mineable(ex)) continue;
    const auto& p = ex.mining_positive();
    if (seen.emplace(p, pool.size()).second) pool.push_back(p);
  }
  return pool;
}

MiningResult mine_dataset(const std::vector<RawExample>& examples, const std::vector<std::string>& corpus,
                          const MiningConfig& config) {
  config.validate();
  if (corpus.empty()) throw ValidationError("mining corpus is empty");

  // Every id holding a given text; duplicates of the positive are all excluded.
  std::unordered_map<std::string, std::vector<std::size_t>> ids_of;
  for (std::size_t i = 0; i < corpus.size(); ++i) ids_of[corpus[i]].push_back(i);

  std::vector<std::size_t> todo;
  std::vector<std::string> queries;
  std::vector<const std::vector<std::size_t>*> positive_ids;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (!mineable(examples[i])) continue;
    const auto it = ids_of.find(examples[i].mining_positive());
    if (it == ids_of.end()) {
      throw ValidationError("example " + std::to_string(i) + " (" + to_string(examples[i].family) +
                            "): positive text not found in the mining corpus");
    }
    todo.push_back(i);
    queries.push_back(examples[i].mining_query());
    positive_ids.push_back(&it->second);
  }

  std::vector<std::vector<MinedNegatives>> lists(todo.size(), std::vector<MinedNegatives>(config.teachers.size()));
  for (std::size_t t = 0; t < config.teachers.size(); ++t) {
    const auto& teacher = *config.teachers[t];
    const auto docs = teacher.embed(corpus);
    const auto q = teacher.embed(queries);
    const auto sims = cosine_rows(q, docs);
    const auto n = static_cast<std::ptrdiff_t>(todo.size());
#pragma omp parallel for schedule(static) num_threads(kernels::num_threads())
    for (std::ptrdiff_t r = 0; r < n; ++r) {
      const auto row = static_cast<std::size_t>(r);
      std::vector<double> s(sims.begin() + static_cast<std::ptrdiff_t>(row * corpus.size()),
                            sims.begin() + static_cast<std::ptrdiff_t>((row + 1) * corpus.size()));
      const auto& pos = *positive_ids[row];
      const double positive_sim = s[pos.front()];
      // Exclude other copies of the positive by making them ineligible.
      for (std::size_t c = 1; c < pos.size(); ++c) s[pos[c]] = std::numeric_limits<double>::infinity();
      lists[row][t] = select_negatives(positive_sim, s, pos.front(), config.k, config.percent_threshold);
    }
  }

  MiningResult result{examples, {}};
  for (std::size_t r = 0; r < todo.size(); ++r) {
    auto& ex = result.examples[todo[r]];
    ex.negatives.clear();
    for (const auto& m : interleave_dedup(lists[r], config.k)) ex.negatives.push_back(corpus[m.corpus_id]);
    if (ex.negatives.empty()) result.flagged.push_back(todo[r]);
  }
  return result;
}

}  // namespace emlab
