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

#include "emlab/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "emlab/encoder.hpp"
#include "emlab/errors.hpp"
#include "emlab/kernels.hpp"

namespace emlab {
namespace {

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

void check_csv_field(const std::string& s, const char* what) {
  if (s.empty() || s.find_first_of(",\"\n\r") != std::string::npos) {
    throw ValidationError(std::string(what) + " '" + s + "' cannot be written as a plain CSV field");
  }
}

std::string task_type_for(TaskFamily family) {
  switch (family) {
    case TaskFamily::kRetrieval: return "Retrieval";
    case TaskFamily::kClassification: return "Classification";
    case TaskFamily::kSts: return "STS";
    case TaskFamily::kBitext: return "BitextMining";
  }
  return "Other";
}

std::string rendered(std::string_view instruction, const std::string& body) {
  return render_input(InstructedInput{std::string(instruction), body});
}

std::size_t intern(std::vector<std::string>& pool, std::unordered_map<std::string, std::size_t>& index,
                   const std::string& text) {
  const auto [it, fresh] = index.emplace(text, pool.size());
  if (fresh) pool.push_back(text);
  return it->second;
}

TaskResult evaluate_task(const Embedder& model, const std::string& name, const std::vector<const RawExample*>& group) {
  const TaskFamily family = group.front()->family;
  TaskResult result{{name, task_type_for(family)}, 0.0, {}};
  switch (family) {
    case TaskFamily::kRetrieval:
    case TaskFamily::kBitext: {
      std::vector<std::string> queries, docs;
      std::unordered_map<std::string, std::size_t> index;
      std::vector<std::vector<std::size_t>> qrels;
      for (const auto* ex : group) {
        if (family == TaskFamily::kRetrieval) {
          queries.push_back(rendered(ex->instruction, ex->query));
          qrels.push_back({intern(docs, index, ex->positive)});
        } else {
          queries.push_back(rendered(kBitextInstruction, ex->sentence));
          qrels.push_back({intern(docs, index, ex->translation)});
        }
      }
      for (const auto* ex : group)
        for (const auto& n : ex->negatives) intern(docs, index, n);
      const auto run = rank_by_cosine(model.embed(queries), model.embed(docs));
      const auto at1 = score_retrieval(run, qrels, 1);
      if (family == TaskFamily::kRetrieval) {
        const auto at10 = score_retrieval(run, qrels, 10);
        result.metrics = {{"ndcg@10", at10.ndcg}, {"recall@1", at1.recall}, {"recall@10", at10.recall}};
        result.main_score = at10.ndcg;
      } else {
        result.metrics = {{"accuracy", at1.recall}};
        result.main_score = at1.recall;
      }
      break;
    }
    case TaskFamily::kClassification: {
      std::vector<std::string> texts, labels;
      std::unordered_map<std::string, std::size_t> index;
      std::vector<std::size_t> truth;
      for (const auto* ex : group) {
        texts.push_back(rendered(ex->instruction, ex->text));
        truth.push_back(intern(labels, index, ex->label));
      }
      for (const auto* ex : group)
        for (const auto& l : ex->misleading_labels) intern(labels, index, l);
      result.main_score = score_classification(model.embed(texts), model.embed(labels), truth);
      result.metrics = {{"accuracy", result.main_score}};
      break;
    }
    case TaskFamily::kSts: {
      std::vector<std::string> a, b;
      std::vector<double> gold;
      for (const auto* ex : group) {
        const auto it = ex->extra.find("score");
        if (it == ex->extra.end() || !it->is_number()) {
          throw ValidationError("STS task '" + name + "' has an example without a numeric 'score'");
        }
        gold.push_back(it->get<double>());
        a.push_back(rendered(kStsInstruction, ex->text_a));
        b.push_back(rendered(kStsInstruction, ex->text_b));
      }
      const auto ea = model.embed(a);
      const auto eb = model.embed(b);
      std::vector<double> predicted(a.size());
      for (std::size_t i = 0; i < a.size(); ++i) {
        kernels::serial::cosine_matrix(1, 1, ea.dim, ea.row(i).data(), eb.row(i).data(), &predicted[i]);
      }
      result.main_score = score_sts(predicted, gold);
      result.metrics = {{"spearman", result.main_score}};
      break;
    }
  }
  return result;
}

}  // namespace

RetrievalScores score_retrieval(const std::vector<std::vector<std::size_t>>& run,
                                const std::vector<std::vector<std::size_t>>& qrels, std::size_t k) {
  if (k < 1) throw ContractError("k must be at least 1");
  if (run.size() != qrels.size()) throw DimensionError("run and qrels cover different query counts");
  if (run.empty()) throw EmptyInputError("no queries to score");
  RetrievalScores total;
  for (std::size_t q = 0; q < run.size(); ++q) {
    const std::set<std::size_t> relevant(qrels[q].begin(), qrels[q].end());
    if (relevant.empty()) throw ValidationError("query " + std::to_string(q) + " has no relevant document");
    const std::size_t depth = std::min(k, run[q].size());
    double hits = 0.0, dcg = 0.0, idcg = 0.0;
    for (std::size_t r = 0; r < depth; ++r) {
      if (relevant.count(run[q][r])) {
        hits += 1.0;
        dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
      }
    }
    for (std::size_t r = 0; r < std::min(k, relevant.size()); ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
    total.recall += hits / static_cast<double>(relevant.size());
    total.ndcg += dcg / idcg;
  }
  total.recall /= static_cast<double>(run.size());
  total.ndcg /= static_cast<double>(run.size());
  return total;
}

std::vector<std::vector<std::size_t>> rank_by_cosine(const EmbeddingMatrix& queries, const EmbeddingMatrix& docs) {
  if (queries.dim != docs.dim) throw DimensionError("query and document embeddings differ in width");
  std::vector<double> sims(queries.rows * docs.rows);
  kernels::cosine_matrix(queries.rows, docs.rows, docs.dim, queries.values.data(), docs.values.data(), sims.data());
  std::vector<std::vector<std::size_t>> out(queries.rows);
  for (std::size_t q = 0; q < queries.rows; ++q) {
    auto& order = out[q];
    order.resize(docs.rows);
    std::iota(order.begin(), order.end(), std::size_t{0});
    const double* row = sims.data() + q * docs.rows;
    std::stable_sort(order.begin(), order.end(), [row](std::size_t a, std::size_t b) { return row[a] > row[b]; });
  }
  return out;
}

double score_classification(const EmbeddingMatrix& texts, const EmbeddingMatrix& labels,
                            const std::vector<std::size_t>& truth) {
  if (labels.rows < 2) throw ContractError("classification needs at least two labels");
  if (truth.size() != texts.rows) throw DimensionError("one true label per text is required");
  if (texts.rows == 0) throw EmptyInputError("no texts to classify");
  if (texts.dim != labels.dim) throw DimensionError("text and label embeddings differ in width");
  std::vector<double> sims(texts.rows * labels.rows);
  kernels::cosine_matrix(texts.rows, labels.rows, texts.dim, texts.values.data(), labels.values.data(), sims.data());
  std::size_t correct = 0;
  for (std::size_t i = 0; i < texts.rows; ++i) {
    if (truth[i] >= labels.rows) throw ValidationError("label index out of range");
    const double* row = sims.data() + i * labels.rows;
    const auto best = static_cast<std::size_t>(std::max_element(row, row + labels.rows) - row);
    correct += best == truth[i];
  }
  return static_cast<double>(correct) / static_cast<double>(texts.rows);
}

std::vector<double> average_ranks(const std::vector<double>& values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
    i = j + 1;
  }
  return ranks;
}

double score_sts(const std::vector<double>& predicted, const std::vector<double>& gold) {
  if (predicted.size() != gold.size()) throw DimensionError("predicted and gold scores differ in length");
  if (gold.size() < 3) throw ValidationError("STS scoring needs at least 3 pairs");
  const auto rp = average_ranks(predicted);
  const auto rg = average_ranks(gold);
  const double n = static_cast<double>(gold.size());
  const double mp = std::accumulate(rp.begin(), rp.end(), 0.0) / n;
  const double mg = std::accumulate(rg.begin(), rg.end(), 0.0) / n;
  double cov = 0.0, vp = 0.0, vg = 0.0;
  for (std::size_t i = 0; i < rp.size(); ++i) {
    cov += (rp[i] - mp) * (rg[i] - mg);
    vp += (rp[i] - mp) * (rp[i] - mp);
    vg += (rg[i] - mg) * (rg[i] - mg);
  }
  if (vp == 0.0 || vg == 0.0) throw DegenerateInputError("Spearman correlation is undefined for a constant vector");
  return cov / std::sqrt(vp * vg);
}

// ---- aggregation -----------------------------------------------------------

std::vector<std::string> ScoreMatrix::type_list() const {
  if (!types.empty()) return types;
  std::vector<std::string> out;
  for (const auto& t : tasks)
    if (std::find(out.begin(), out.end(), t.type) == out.end()) out.push_back(t.type);
  return out;
}

void ScoreMatrix::validate() const {
  if (scores.size() != models.size() * tasks.size()) {
    throw ValidationError("score table has " + std::to_string(scores.size()) + " cells, expected " +
                          std::to_string(models.size() * tasks.size()));
  }
  if (std::set<std::string>(models.begin(), models.end()).size() != models.size()) {
    throw ValidationError("duplicate model name in score table");
  }
  std::set<std::string> names;
  const auto declared = type_list();
  for (const auto& t : tasks) {
    if (!names.insert(t.name).second) throw ValidationError("duplicate task '" + t.name + "'");
    if (std::find(declared.begin(), declared.end(), t.type) == declared.end()) {
      throw ValidationError("task '" + t.name + "' has undeclared type '" + t.type + "'");
    }
  }
  for (const double s : scores)
    if (!std::isfinite(s)) throw ValidationError("score table contains a non-finite score");
}

double mean_task(const ScoreMatrix& matrix, std::size_t model) {
  matrix.validate();
  if (model >= matrix.models.size()) throw ContractError("model index out of range");
  if (matrix.tasks.empty()) throw EmptyInputError("score table has no tasks");
  double sum = 0.0;
  for (std::size_t t = 0; t < matrix.tasks.size(); ++t) sum += matrix.at(model, t);
  return sum / static_cast<double>(matrix.tasks.size());
}

double mean_type(const ScoreMatrix& matrix, std::size_t model) {
  matrix.validate();
  if (model >= matrix.models.size()) throw ContractError("model index out of range");
  const auto types = matrix.type_list();
  if (types.empty()) throw EmptyInputError("score table has no task types");
  double sum = 0.0;
  for (const auto& type : types) {
    double type_sum = 0.0;
    std::size_t count = 0;
    for (std::size_t t = 0; t < matrix.tasks.size(); ++t) {
      if (matrix.tasks[t].type != type) continue;
      type_sum += matrix.at(model, t);
      ++count;
    }
    if (count == 0) throw ValidationError("task type '" + type + "' has no tasks");
    sum += type_sum / static_cast<double>(count);
  }
  return sum / static_cast<double>(types.size());
}

BordaOutcome borda_rank(const ScoreMatrix& matrix) {
  matrix.validate();
  const std::size_t m = matrix.models.size();
  BordaOutcome out{std::vector<double>(m, 0.0), std::vector<std::size_t>(m, 1)};
  std::vector<std::size_t> order(m);
  for (std::size_t t = 0; t < matrix.tasks.size(); ++t) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return matrix.at(a, t) > matrix.at(b, t); });
    for (std::size_t i = 0; i < m;) {
      std::size_t j = i;
      while (j + 1 < m && matrix.at(order[j + 1], t) == matrix.at(order[i], t)) ++j;
      // positions i..j (0-based) are worth m-1-i .. m-1-j votes
      const double share = static_cast<double>(2 * m - 2 - i - j) / 2.0;
      for (std::size_t p = i; p <= j; ++p) out.votes[order[p]] += share;
      i = j + 1;
    }
  }
  for (std::size_t a = 0; a < m; ++a) {
    std::size_t better = 0;
    for (std::size_t b = 0; b < m; ++b) better += out.votes[b] > out.votes[a];
    out.ranks[a] = better + 1;
  }
  return out;
}

void write_score_csv(const std::filesystem::path& path, const ScoreMatrix& matrix) {
  matrix.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << "model,task,task_type,score\n";
  for (std::size_t m = 0; m < matrix.models.size(); ++m) {
    check_csv_field(matrix.models[m], "model name");
    for (std::size_t t = 0; t < matrix.tasks.size(); ++t) {
      check_csv_field(matrix.tasks[t].name, "task name");
      check_csv_field(matrix.tasks[t].type, "task type");
      out << matrix.models[m] << ',' << matrix.tasks[t].name << ',' << matrix.tasks[t].type << ','
          << exact(matrix.at(m, t)) << '\n';
    }
  }
  if (!out) throw ConfigError("write failed for " + path.string());
}

ScoreMatrix read_score_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || (line != "model,task,task_type,score" && line != "model,task,task_type,score\r")) {
    throw ParseError(1, "expected header 'model,task,task_type,score'");
  }
  ScoreMatrix matrix;
  std::map<std::pair<std::size_t, std::size_t>, double> cells;
  std::size_t number = 1;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 4) throw ParseError(number, "expected 4 fields");
    double score = 0.0;
    try {
      std::size_t used = 0;
      score = std::stod(f[3], &used);
      if (used != f[3].size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw ParseError(number, "score '" + f[3] + "' is not a number");
    }
    auto mi = std::find(matrix.models.begin(), matrix.models.end(), f[0]) - matrix.models.begin();
    if (static_cast<std::size_t>(mi) == matrix.models.size()) matrix.models.push_back(f[0]);
    auto ti = std::find_if(matrix.tasks.begin(), matrix.tasks.end(), [&](const TaskInfo& t) { return t.name == f[1]; }) -
              matrix.tasks.begin();
    if (static_cast<std::size_t>(ti) == matrix.tasks.size()) {
      matrix.tasks.push_back({f[1], f[2]});
    } else if (matrix.tasks[static_cast<std::size_t>(ti)].type != f[2]) {
      throw ParseError(number, "task '" + f[1] + "' listed with two different types");
    }
    if (!cells.emplace(std::pair{static_cast<std::size_t>(mi), static_cast<std::size_t>(ti)}, score).second) {
      throw ParseError(number, "duplicate cell for model '" + f[0] + "', task '" + f[1] + "'");
    }
  }
  matrix.scores.assign(matrix.models.size() * matrix.tasks.size(), 0.0);
  for (std::size_t m = 0; m < matrix.models.size(); ++m) {
    for (std::size_t t = 0; t < matrix.tasks.size(); ++t) {
      const auto it = cells.find({m, t});
      if (it == cells.end()) {
        throw ValidationError("missing score for model '" + matrix.models[m] + "', task '" + matrix.tasks[t].name + "'");
      }
      matrix.scores[m * matrix.tasks.size() + t] = it->second;
    }
  }
  matrix.validate();
  return matrix;
}

std::string leaderboard_report(const ScoreMatrix& matrix) {
  const auto borda = borda_rank(matrix);
  std::vector<std::size_t> order(matrix.models.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return borda.ranks[a] < borda.ranks[b]; });
  std::size_t width = 5;
  for (const auto& m : matrix.models) width = std::max(width, m.size());
  std::ostringstream out;
  out << pad("Rank", 6) << pad("Model", width + 2) << pad("Borda Votes", 13) << pad("Mean(Task)", 12) << "Mean(Type)\n";
  for (const auto m : order) {
    char votes[32];
    std::snprintf(votes, sizeof votes, "%g", borda.votes[m]);
    out << pad(std::to_string(borda.ranks[m]), 6) << pad(matrix.models[m], width + 2) << pad(votes, 13)
        << pad(fixed(mean_task(matrix, m)), 12) << fixed(mean_type(matrix, m)) << '\n';
  }
  return out.str();
}

// ---- evaluation bundle -------------------------------------------------------

std::vector<TaskResult> evaluate(const Embedder& model, const std::vector<RawExample>& examples) {
  std::vector<std::string> names;
  std::map<std::string, std::vector<const RawExample*>> groups;
  for (const auto& ex : examples) {
    const auto it = ex.extra.find("task");
    const std::string name = it != ex.extra.end() && it->is_string() ? it->get<std::string>() : to_string(ex.family);
    auto& group = groups[name];
    if (group.empty()) names.push_back(name);
    if (!group.empty() && group.front()->family != ex.family) {
      throw ValidationError("task '" + name + "' mixes task families");
    }
    group.push_back(&ex);
  }
  std::vector<TaskResult> results;
  for (const auto& name : names) results.push_back(evaluate_task(model, name, groups[name]));
  return results;
}

ScoreMatrix score_matrix(const std::vector<std::string>& models, const std::vector<std::vector<TaskResult>>& results) {
  if (models.size() != results.size()) throw DimensionError("one result list per model is required");
  ScoreMatrix matrix;
  matrix.models = models;
  if (results.empty()) return matrix;
  for (const auto& r : results.front()) matrix.tasks.push_back(r.task);
  for (const auto& list : results) {
    if (list.size() != matrix.tasks.size()) throw ValidationError("models were evaluated on different task sets");
    for (std::size_t t = 0; t < list.size(); ++t) {
      if (!(list[t].task == matrix.tasks[t])) throw ValidationError("models were evaluated on different task sets");
      matrix.scores.push_back(list[t].main_score);
    }
  }
  matrix.validate();
  return matrix;
}

std::string metrics_report(const std::vector<std::string>& models, const std::vector<std::vector<TaskResult>>& results) {
  std::ostringstream out;
  for (std::size_t m = 0; m < models.size() && m < results.size(); ++m) {
    for (const auto& r : results[m]) {
      out << models[m] << "  " << r.task.name << " (" << r.task.type << ")";
      for (const auto& [metric, value] : r.metrics) out << "  " << metric << '=' << fixed(value);
      out << '\n';
    }
  }
  return out.str();
}

}  // namespace emlab
