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

#include "emlab/dataio.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "emlab/encoder.hpp"
#include "emlab/errors.hpp"

namespace emlab {
namespace {

using nlohmann::json;

std::string where(std::size_t line) { return line ? "line " + std::to_string(line) + ": " : ""; }

void require_nonempty(const std::string& value, const char* field, TaskFamily family) {
  if (value.empty()) {
    throw ValidationError(std::string(to_string(family)) + " example requires non-empty '" + field + "'");
  }
}

std::string rendered(std::string_view instruction, const std::string& body) {
  return render_input(InstructedInput{std::string(instruction), body});
}

std::vector<std::string> drop_copies_of(const std::vector<std::string>& negatives, const std::string& positive) {
  std::vector<std::string> kept;
  kept.reserve(negatives.size());
  for (const auto& n : negatives) {
    if (n != positive) kept.push_back(n);
  }
  return kept;
}

void require_family(const RawExample& ex, TaskFamily family) {
  if (ex.family != family) {
    throw ValidationError("expected a " + to_string(family) + " example, got " + to_string(ex.family));
  }
}

// Field names owned by each family; everything else goes to `extra`.
const std::vector<std::string>& known_fields(TaskFamily family) {
  static const std::vector<std::string> retrieval{"instruction", "query", "positive", "negatives"};
  static const std::vector<std::string> classification{"instruction", "text", "label", "misleading_labels"};
  static const std::vector<std::string> sts{"text_a", "text_b", "negatives"};
  static const std::vector<std::string> bitext{"sentence", "translation", "negatives"};
  switch (family) {
    case TaskFamily::kRetrieval: return retrieval;
    case TaskFamily::kClassification: return classification;
    case TaskFamily::kSts: return sts;
    case TaskFamily::kBitext: return bitext;
  }
  return retrieval;
}

std::string get_string(const json& j, const char* key, std::size_t line) {
  const auto it = j.find(key);
  if (it == j.end()) return {};
  if (!it->is_string()) throw ParseError(line, std::string("field '") + key + "' must be a string");
  return it->get<std::string>();
}

std::vector<std::string> get_strings(const json& j, const char* key, std::size_t line) {
  const auto it = j.find(key);
  if (it == j.end()) return {};
  if (!it->is_array()) throw ParseError(line, std::string("field '") + key + "' must be an array of strings");
  std::vector<std::string> out;
  for (const auto& v : *it) {
    if (!v.is_string()) throw ParseError(line, std::string("field '") + key + "' must be an array of strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

}  // namespace

std::string to_string(TaskFamily family) {
  switch (family) {
    case TaskFamily::kRetrieval: return "retrieval";
    case TaskFamily::kClassification: return "classification";
    case TaskFamily::kSts: return "sts";
    case TaskFamily::kBitext: return "bitext";
  }
  return "unknown";
}

TaskFamily parse_task_family(std::string_view text) {
  if (text == "retrieval") return TaskFamily::kRetrieval;
  if (text == "classification") return TaskFamily::kClassification;
  if (text == "sts") return TaskFamily::kSts;
  if (text == "bitext") return TaskFamily::kBitext;
  throw ValidationError("unknown task_family '" + std::string(text) + "'");
}

void RawExample::validate() const {
  switch (family) {
    case TaskFamily::kRetrieval:
      require_nonempty(instruction, "instruction", family);
      require_nonempty(query, "query", family);
      require_nonempty(positive, "positive", family);
      break;
    case TaskFamily::kClassification:
      require_nonempty(instruction, "instruction", family);
      require_nonempty(text, "text", family);
      require_nonempty(label, "label", family);
      break;
    case TaskFamily::kSts:
      require_nonempty(text_a, "text_a", family);
      require_nonempty(text_b, "text_b", family);
      break;
    case TaskFamily::kBitext:
      require_nonempty(sentence, "sentence", family);
      require_nonempty(translation, "translation", family);
      break;
  }
}

std::string RawExample::mining_query() const {
  switch (family) {
    case TaskFamily::kRetrieval: return rendered(instruction, query);
    case TaskFamily::kSts: return text_a;
    case TaskFamily::kBitext: return sentence;
    case TaskFamily::kClassification: break;
  }
  return {};
}

const std::string& RawExample::mining_positive() const {
  switch (family) {
    case TaskFamily::kRetrieval: return positive;
    case TaskFamily::kSts: return text_b;
    case TaskFamily::kBitext: return translation;
    case TaskFamily::kClassification: break;
  }
  return label;
}

json to_json(const RawExample& ex) {
  json j = ex.extra.is_object() ? ex.extra : json::object();
  j["task_family"] = to_string(ex.family);
  switch (ex.family) {
    case TaskFamily::kRetrieval:
      j["instruction"] = ex.instruction;
      j["query"] = ex.query;
      j["positive"] = ex.positive;
      j["negatives"] = ex.negatives;
      break;
    case TaskFamily::kClassification:
      j["instruction"] = ex.instruction;
      j["text"] = ex.text;
      j["label"] = ex.label;
      j["misleading_labels"] = ex.misleading_labels;
      break;
    case TaskFamily::kSts:
      j["text_a"] = ex.text_a;
      j["text_b"] = ex.text_b;
      j["negatives"] = ex.negatives;
      break;
    case TaskFamily::kBitext:
      j["sentence"] = ex.sentence;
      j["translation"] = ex.translation;
      j["negatives"] = ex.negatives;
      break;
  }
  return j;
}

RawExample raw_example_from_json(const json& j, std::size_t line) {
  if (!j.is_object()) throw ParseError(line, "expected a JSON object");
  const auto fam = j.find("task_family");
  if (fam == j.end() || !fam->is_string()) throw ParseError(line, "missing string field 'task_family'");
  RawExample ex;
  try {
    ex.family = parse_task_family(fam->get<std::string>());
  } catch (const ValidationError& e) {
    throw ValidationError(where(line) + e.what());
  }
  ex.instruction = ex.family == TaskFamily::kRetrieval || ex.family == TaskFamily::kClassification
                       ? get_string(j, "instruction", line)
                       : std::string();
  switch (ex.family) {
    case TaskFamily::kRetrieval:
      ex.query = get_string(j, "query", line);
      ex.positive = get_string(j, "positive", line);
      ex.negatives = get_strings(j, "negatives", line);
      break;
    case TaskFamily::kClassification:
      ex.text = get_string(j, "text", line);
      ex.label = get_string(j, "label", line);
      ex.misleading_labels = get_strings(j, "misleading_labels", line);
      break;
    case TaskFamily::kSts:
      ex.text_a = get_string(j, "text_a", line);
      ex.text_b = get_string(j, "text_b", line);
      ex.negatives = get_strings(j, "negatives", line);
      break;
    case TaskFamily::kBitext:
      ex.sentence = get_string(j, "sentence", line);
      ex.translation = get_string(j, "translation", line);
      ex.negatives = get_strings(j, "negatives", line);
      break;
  }
  const auto& known = known_fields(ex.family);
  for (const auto& [key, value] : j.items()) {
    if (key == "task_family" || std::find(known.begin(), known.end(), key) != known.end()) continue;
    ex.extra[key] = value;
  }
  try {
    ex.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(where(line) + e.what());
  }
  return ex;
}

TrainingTriplet build_retrieval_triplet(const RawExample& ex) {
  require_family(ex, TaskFamily::kRetrieval);
  ex.validate();
  if (ex.negatives.empty()) throw ValidationError("retrieval example has no hard negatives");
  auto negatives = drop_copies_of(ex.negatives, ex.positive);
  if (negatives.empty()) throw ValidationError("every hard negative is a copy of the positive");
  return TrainingTriplet{rendered(ex.instruction, ex.query), ex.positive, std::move(negatives)};
}

TrainingTriplet build_classification_triplet(const RawExample& ex) {
  require_family(ex, TaskFamily::kClassification);
  ex.validate();
  if (ex.misleading_labels.empty()) throw ValidationError("classification example has no misleading labels");
  if (std::find(ex.misleading_labels.begin(), ex.misleading_labels.end(), ex.label) != ex.misleading_labels.end()) {
    throw ValidationError("label '" + ex.label + "' also appears among the misleading labels");
  }
  return TrainingTriplet{rendered(ex.instruction, ex.text), ex.label, ex.misleading_labels};
}

std::vector<TrainingTriplet> build_sts_triplets(const RawExample& ex) {
  require_family(ex, TaskFamily::kSts);
  ex.validate();
  const auto a = rendered(kStsInstruction, ex.text_a);
  const auto b = rendered(kStsInstruction, ex.text_b);
  std::vector<std::string> negs;
  negs.reserve(ex.negatives.size());
  for (const auto& n : ex.negatives) negs.push_back(rendered(kStsInstruction, n));
  return {TrainingTriplet{a, b, drop_copies_of(negs, b)}, TrainingTriplet{b, a, drop_copies_of(negs, a)}};
}

std::vector<TrainingTriplet> build_bitext_triplets(const RawExample& ex) {
  require_family(ex, TaskFamily::kBitext);
  ex.validate();
  return {TrainingTriplet{rendered(kBitextInstruction, ex.sentence), ex.translation,
                          drop_copies_of(ex.negatives, ex.translation)},
          TrainingTriplet{rendered(kBitextInstruction, ex.translation), ex.sentence,
                          drop_copies_of(ex.negatives, ex.sentence)}};
}

std::vector<TrainingTriplet> build_triplets(const RawExample& ex) {
  switch (ex.family) {
    case TaskFamily::kRetrieval: return {build_retrieval_triplet(ex)};
    case TaskFamily::kClassification: return {build_classification_triplet(ex)};
    case TaskFamily::kSts: return build_sts_triplets(ex);
    case TaskFamily::kBitext: return build_bitext_triplets(ex);
  }
  return {};
}

std::vector<RawExample> load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::vector<RawExample> out;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (text.find_first_not_of(" \t") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ParseError(line, std::string("malformed JSON: ") + e.what());
    }
    out.push_back(raw_example_from_json(j, line));
  }
  return out;
}

void save_jsonl(const std::filesystem::path& path, const std::vector<RawExample>& examples) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  for (const auto& ex : examples) out << to_json(ex).dump() << '\n';
  if (!out) throw ConfigError("write failed for " + path.string());
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::istringstream in{std::string(text)};
  std::string w;
  while (in >> w) words.push_back(w);
  return words;
}

// ---- toy corpus ------------------------------------------------------------

namespace {

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32), 0x746f79u};
  return std::mt19937_64(seq);
}

std::size_t pick(std::mt19937_64& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

}  // namespace

ToyWorld make_toy_world(const ToyCorpusConfig& config) {
  if (config.n_clusters < 2) throw ConfigError("toy corpus needs at least 2 clusters");
  if (config.vocab < 2 * config.n_clusters) throw ConfigError("toy corpus vocab too small for the cluster count");
  if (config.words_per_doc == 0 || config.words_per_query == 0 || config.words_per_query > config.words_per_doc) {
    throw ConfigError("toy corpus needs 0 < words_per_query <= words_per_doc");
  }
  if (!(config.topic_fraction > 0.0 && config.topic_fraction <= 1.0)) {
    throw ConfigError("toy corpus topic_fraction must be in (0, 1]");
  }
  auto rng = stream_rng(config.seed, ~std::uint64_t{0});
  ToyWorld world;
  static constexpr std::string_view kConsonants = "bcdfghjklmnprstvz";
  static constexpr std::string_view kVowels = "aeiou";
  std::set<std::string> seen;
  while (world.words.size() < config.vocab) {
    // consonant-vowel syllables, 3 to 5 letters
    const std::size_t len = 3 + pick(rng, 3);
    std::string w;
    for (std::size_t i = 0; i < len; ++i) {
      w += i % 2 == 0 ? kConsonants[pick(rng, kConsonants.size())] : kVowels[pick(rng, kVowels.size())];
    }
    if (seen.insert(w).second) world.words.push_back(std::move(w));
  }
  const auto n_topic = static_cast<std::size_t>(static_cast<double>(config.vocab) * config.topic_fraction);
  const std::size_t per_cluster = std::max<std::size_t>(1, n_topic / config.n_clusters);
  world.topic_words.resize(config.n_clusters);
  std::size_t next = 0;
  for (auto& topic : world.topic_words) {
    for (std::size_t i = 0; i < per_cluster; ++i) topic.push_back(next++);
  }
  for (; next < config.vocab; ++next) world.shared_words.push_back(next);
  if (world.shared_words.empty()) world.shared_words.push_back(0);
  for (const auto& topic : world.topic_words) {
    world.labels.push_back(world.words[topic[0]] + " " + world.words[topic[1 % topic.size()]]);
  }
  return world;
}

ToyCorpus generate_toy_corpus(const ToyCorpusConfig& config, std::uint64_t stream) {
  ToyCorpus corpus;
  corpus.world = make_toy_world(config);
  const auto& world = corpus.world;
  auto rng = stream_rng(config.seed, stream);
  std::bernoulli_distribution topical(config.topic_fraction);
  for (std::size_t c = 0; c < config.n_clusters; ++c) {
    const auto& topic = world.topic_words[c];
    for (std::size_t i = 0; i < config.n_per_cluster; ++i) {
      std::vector<std::string> doc;
      std::vector<std::size_t> topical_slots;
      for (std::size_t w = 0; w < config.words_per_doc; ++w) {
        if (topical(rng)) {
          topical_slots.push_back(w);
          doc.push_back(world.words[topic[pick(rng, topic.size())]]);
        } else {
          doc.push_back(world.words[world.shared_words[pick(rng, world.shared_words.size())]]);
        }
      }
      // Query words are drawn from the document, topical positions first.
      std::vector<std::size_t> slots(config.words_per_doc);
      for (std::size_t w = 0; w < slots.size(); ++w) slots[w] = w;
      std::shuffle(slots.begin(), slots.end(), rng);
      std::stable_partition(slots.begin(), slots.end(), [&](std::size_t s) {
        return std::find(topical_slots.begin(), topical_slots.end(), s) != topical_slots.end();
      });
      slots.resize(config.words_per_query);
      std::sort(slots.begin(), slots.end());
      std::vector<std::string> query;
      for (const auto s : slots) query.push_back(doc[s]);

      RawExample ex;
      ex.family = TaskFamily::kRetrieval;
      ex.instruction = config.instruction;
      ex.query = join(query);
      ex.positive = join(doc);
      corpus.pairs.push_back(std::move(ex));
      corpus.cluster_of.push_back(c);
    }
  }
  return corpus;
}

std::vector<RawExample> toy_classification_examples(const ToyCorpus& corpus, std::size_t n_misleading,
                                                    std::uint64_t seed) {
  const auto& labels = corpus.world.labels;
  if (n_misleading == 0 || n_misleading >= labels.size()) {
    throw ConfigError("n_misleading must be in [1, n_clusters - 1]");
  }
  auto rng = stream_rng(seed, 0x636c73u);
  std::vector<RawExample> out;
  out.reserve(corpus.pairs.size());
  for (std::size_t i = 0; i < corpus.pairs.size(); ++i) {
    const std::size_t c = corpus.cluster_of[i];
    std::vector<std::string> others;
    for (std::size_t o = 0; o < labels.size(); ++o) {
      if (o != c) others.push_back(labels[o]);
    }
    std::shuffle(others.begin(), others.end(), rng);
    others.resize(n_misleading);
    RawExample ex;
    ex.family = TaskFamily::kClassification;
    ex.instruction = "Classify the topic";
    ex.text = corpus.pairs[i].positive;
    ex.label = labels[c];
    ex.misleading_labels = std::move(others);
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<RawExample> toy_sts_examples(const ToyCorpus& corpus, std::size_t max_replaced, std::uint64_t seed,
                                         bool with_gold) {
  const auto& world = corpus.world;
  auto rng = stream_rng(seed, 0x737473u);
  std::vector<RawExample> out;
  out.reserve(corpus.pairs.size());
  for (std::size_t i = 0; i < corpus.pairs.size(); ++i) {
    auto words = split_words(corpus.pairs[i].positive);
    const std::size_t n = words.size();
    const std::size_t replaced = std::min(n, pick(rng, max_replaced + 1));
    std::vector<std::size_t> slots(n);
    for (std::size_t s = 0; s < n; ++s) slots[s] = s;
    std::shuffle(slots.begin(), slots.end(), rng);
    const std::size_t c = corpus.cluster_of[i];
    for (std::size_t r = 0; r < replaced; ++r) {
      // replacement word from a different cluster
      std::size_t other = pick(rng, world.topic_words.size() - 1);
      if (other >= c) ++other;
      const auto& topic = world.topic_words[other];
      words[slots[r]] = world.words[topic[pick(rng, topic.size())]];
    }
    RawExample ex;
    ex.family = TaskFamily::kSts;
    ex.text_a = corpus.pairs[i].positive;
    ex.text_b = join(words);
    if (with_gold) ex.extra["score"] = static_cast<double>(n - replaced);
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace emlab
