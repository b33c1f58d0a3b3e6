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
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "emlab/dataio.hpp"
#include "emlab/mining.hpp"

namespace emlab {

// ---- scorers ---------------------------------------------------------------

struct RetrievalScores {
  double recall = 0.0;
  double ndcg = 0.0;
};

/// `run[q]` is the ranked document list for query q, `qrels[q]` its relevant
/// ids. Recall@k and binary-gain nDCG@k with a log2 discount, averaged over
/// queries.
RetrievalScores score_retrieval(const std::vector<std::vector<std::size_t>>& run,
                                const std::vector<std::vector<std::size_t>>& qrels, std::size_t k);

/// Documents ordered by cosine similarity, highest first, ties by id.
std::vector<std::vector<std::size_t>> rank_by_cosine(const EmbeddingMatrix& queries, const EmbeddingMatrix& docs);

/// Fraction of texts whose most similar label embedding is the true label
/// (ties resolve to the lower label index).
double score_classification(const EmbeddingMatrix& texts, const EmbeddingMatrix& labels,
                            const std::vector<std::size_t>& truth);

/// Spearman correlation with average ranks for ties.
double score_sts(const std::vector<double>& predicted, const std::vector<double>& gold);

/// 1-based ranks, tied values share the mean of the positions they span.
std::vector<double> average_ranks(const std::vector<double>& values);

// ---- aggregation -----------------------------------------------------------

struct TaskInfo {
  std::string name;
  std::string type;

  bool operator==(const TaskInfo&) const = default;
};

/// Dense models x tasks score table.
struct ScoreMatrix {
  std::vector<std::string> models;
  std::vector<TaskInfo> tasks;
  /// Declared task types. Empty means "the types used by `tasks`, in order".
  std::vector<std::string> types;
  std::vector<double> scores;  // row-major [models x tasks]

  double at(std::size_t model, std::size_t task) const { return scores[model * tasks.size() + task]; }
  std::vector<std::string> type_list() const;
  /// Throws ValidationError on size mismatches, duplicate names, undeclared
  /// types or non-finite scores.
  void validate() const;

  bool operator==(const ScoreMatrix&) const = default;
};

double mean_task(const ScoreMatrix& matrix, std::size_t model);
/// Mean over tasks within each type, then over types. A declared type with
/// no task is a ValidationError.
double mean_type(const ScoreMatrix& matrix, std::size_t model);

struct BordaOutcome {
  std::vector<double> votes;
  std::vector<std::size_t> ranks;  // 1 = best; tied models share the better rank
};

/// Every task is a voter: the model ranked r-th of M gets M - r votes, tied
/// models split the votes of the positions they span.
BordaOutcome borda_rank(const ScoreMatrix& matrix);

void write_score_csv(const std::filesystem::path& path, const ScoreMatrix& matrix);
/// Reads "model,task,task_type,score" rows; every (model, task) cell must be
/// present exactly once.
ScoreMatrix read_score_csv(const std::filesystem::path& path);

/// Leaderboard table: Rank, Model, Borda Votes, Mean(Task), Mean(Type).
std::string leaderboard_report(const ScoreMatrix& matrix);

// ---- evaluation bundle -------------------------------------------------------

struct TaskResult {
  TaskInfo task;
  double main_score = 0.0;
  std::map<std::string, double> metrics;
};

/// Groups examples into tasks by extra["task"] (falling back to the family
/// name) and scores each with the embedder:
///   retrieval      main score nDCG@10, also recall@1, recall@10
///   classification nearest-label accuracy
///   sts            Spearman against extra["score"]
///   bitext         translation retrieval accuracy (recall@1)
std::vector<TaskResult> evaluate(const Embedder& model, const std::vector<RawExample>& examples);

/// One row per model, tasks in the order of the first result list.
ScoreMatrix score_matrix(const std::vector<std::string>& models, const std::vector<std::vector<TaskResult>>& results);

/// Per-task metric lines, e.g. "toy-retrieval  ndcg@10=0.9812 recall@1=0.9531".
std::string metrics_report(const std::vector<std::string>& models,
                           const std::vector<std::vector<TaskResult>>& results);

}  // namespace emlab
