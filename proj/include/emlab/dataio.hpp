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
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace emlab {

enum class TaskFamily { kRetrieval, kClassification, kSts, kBitext };

std::string to_string(TaskFamily family);
TaskFamily parse_task_family(std::string_view text);

// Fixed instructions for the families whose instruction is not per-example.
inline constexpr std::string_view kStsInstruction = "Retrieve semantically similar text.";
inline constexpr std::string_view kBitextInstruction = "Retrieve parallel sentences.";

/// One dataset line. Only the fields of `family` are meaningful; anything
/// else found on the line is kept verbatim in `extra`.
struct RawExample {
  TaskFamily family = TaskFamily::kRetrieval;
  // retrieval
  std::string instruction;
  std::string query;
  std::string positive;
  std::vector<std::string> negatives;  // also sts and bitext
  // classification (uses `instruction` too)
  std::string text;
  std::string label;
  std::vector<std::string> misleading_labels;
  // sts
  std::string text_a;
  std::string text_b;
  // bitext
  std::string sentence;
  std::string translation;

  nlohmann::json extra = nlohmann::json::object();

  /// Throws ValidationError when a required field of the family is empty.
  void validate() const;

  /// Query-side text for mining (rendered for retrieval) and the text the
  /// negatives must be dissimilar from. Empty for classification.
  std::string mining_query() const;
  const std::string& mining_positive() const;

  bool operator==(const RawExample&) const = default;
};

nlohmann::json to_json(const RawExample& ex);
/// `line` is only used for error messages.
RawExample raw_example_from_json(const nlohmann::json& j, std::size_t line = 0);

struct TrainingTriplet {
  std::string query_text;
  std::string positive_text;
  std::vector<std::string> negative_texts;

  bool operator==(const TrainingTriplet&) const = default;
  auto operator<=>(const TrainingTriplet&) const = default;
};

TrainingTriplet build_retrieval_triplet(const RawExample& ex);
TrainingTriplet build_classification_triplet(const RawExample& ex);
/// (A -> B) and (B -> A), every text rendered with the STS instruction.
std::vector<TrainingTriplet> build_sts_triplets(const RawExample& ex);
/// Both directions; the query side carries the bitext instruction, the
/// parallel sentence and negatives stay unformatted like retrieval documents.
std::vector<TrainingTriplet> build_bitext_triplets(const RawExample& ex);
std::vector<TrainingTriplet> build_triplets(const RawExample& ex);

/// Empty lines are skipped. Malformed lines raise ParseError / ValidationError
/// carrying the 1-based line number.
std::vector<RawExample> load_jsonl(const std::filesystem::path& path);
void save_jsonl(const std::filesystem::path& path, const std::vector<RawExample>& examples);

// ---- procedural toy corpus ------------------------------------------------

struct ToyCorpusConfig {
  std::uint64_t seed = 0;
  std::size_t n_clusters = 8;
  std::size_t n_per_cluster = 64;
  /// Number of distinct pseudo-words shared out between clusters.
  std::size_t vocab = 512;
  std::size_t words_per_doc = 8;
  std::size_t words_per_query = 6;
  /// Probability that a document word comes from its cluster's topic words.
  double topic_fraction = 0.85;
  std::string instruction = "Find the passage";
};

/// Word inventory of a toy corpus; fixed by the seed, shared by every split.
struct ToyWorld {
  std::vector<std::string> words;
  std::vector<std::vector<std::size_t>> topic_words;  // per cluster
  std::vector<std::size_t> shared_words;
  std::vector<std::string> labels;  // one label name per cluster
};

struct ToyCorpus {
  ToyWorld world;
  std::vector<RawExample> pairs;  // retrieval family, no negatives yet
  std::vector<std::size_t> cluster_of;
};

ToyWorld make_toy_world(const ToyCorpusConfig& config);
/// Query/positive pairs; `stream` selects an independent sample of the same
/// world (0 = training split).
ToyCorpus generate_toy_corpus(const ToyCorpusConfig& config, std::uint64_t stream = 0);

/// Classification examples over the toy clusters: text = a document, label =
/// its cluster's label, `n_misleading` other labels drawn at build time.
std::vector<RawExample> toy_classification_examples(const ToyCorpus& corpus, std::size_t n_misleading,
                                                    std::uint64_t seed);
/// STS pairs (document, perturbed copy). Gold similarity, when requested, is
/// stored in extra["score"] as words_per_doc minus the number of replaced words.
std::vector<RawExample> toy_sts_examples(const ToyCorpus& corpus, std::size_t max_replaced,
                                         std::uint64_t seed, bool with_gold);

std::vector<std::string> split_words(std::string_view text);

}  // namespace emlab
