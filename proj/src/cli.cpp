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

#include "emlab/cli.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "emlab/errors.hpp"
#include "emlab/evaluation.hpp"
#include "emlab/kernels.hpp"
#include "emlab/mining.hpp"

namespace emlab {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::vector<ConfigKey> stage_keys(const std::string& stage) {
  return {
      {stage + ".peak_lr", KeyKind::kDouble, "peak learning rate"},
      {stage + ".batch_size", KeyKind::kUint, "queries per step"},
      {stage + ".n_steps", KeyKind::kUint, "optimizer steps"},
      {stage + ".warmup_steps", KeyKind::kUint, "linear warmup steps"},
      {stage + ".weight_decay", KeyKind::kDouble, "decoupled AdamW weight decay"},
      {stage + ".n_hard_negatives", KeyKind::kUint, "hard negatives per query"},
      {stage + ".temperature", KeyKind::kDouble, "InfoNCE temperature"},
      {stage + ".loss_variant", KeyKind::kString, "hn_only | gemini | gecko | qwen3"},
  };
}

std::vector<ConfigKey> build_keys() {
  std::vector<ConfigKey> keys = {
      {"preset", KeyKind::kString, "built-in defaults: desk | paper"},
      {"seed", KeyKind::kUint, "root seed; every subsystem derives its own"},
      {"threads", KeyKind::kUint, "worker threads (1 = bit-reproducible)"},
      {"out", KeyKind::kPath, "output directory"},

      {"encoder.n_layers", KeyKind::kUint, "transformer blocks"},
      {"encoder.d_model", KeyKind::kUint, "hidden width"},
      {"encoder.n_heads", KeyKind::kUint, "attention heads"},
      {"encoder.d_ff", KeyKind::kUint, "SwiGLU inner width"},
      {"encoder.rope_base", KeyKind::kDouble, "rotary embedding base"},
      {"encoder.attention_mode", KeyKind::kString, "bidirectional | causal"},
      {"encoder.max_seq_len", KeyKind::kUint, "tokens kept per text"},
      {"encoder.norm_eps", KeyKind::kDouble, "RMSNorm epsilon"},

      {"toy.n_clusters", KeyKind::kUint, "topic clusters"},
      {"toy.n_per_cluster", KeyKind::kUint, "training pairs per cluster"},
      {"toy.held_out_per_cluster", KeyKind::kUint, "evaluation pairs per cluster"},
      {"toy.vocab", KeyKind::kUint, "distinct pseudo-words"},
      {"toy.words_per_doc", KeyKind::kUint, "words per document"},
      {"toy.words_per_query", KeyKind::kUint, "words per query"},
      {"toy.topic_fraction", KeyKind::kDouble, "share of document words drawn from the topic"},
      {"toy.instruction", KeyKind::kString, "retrieval task instruction"},
      {"toy.n_misleading", KeyKind::kUint, "wrong labels per classification example"},
      {"toy.sts_max_replaced", KeyKind::kUint, "most words replaced in an STS pair"},

      {"mining.k", KeyKind::kUint, "negatives kept per example"},
      {"mining.percent_threshold", KeyKind::kDouble, "keep candidates below this fraction of the positive score"},
      {"mining.teachers", KeyKind::kPathList, "teacher checkpoints, or 'lexical'"},
  };
  for (const auto& stage : {std::string("pretrain"), std::string("finetune")}) {
    for (auto& k : stage_keys(stage)) keys.push_back(std::move(k));
  }
  const std::vector<ConfigKey> io = {
      {"mine.input", KeyKind::kPath, "JSONL dataset to mine"},
      {"train.input", KeyKind::kPath, "JSONL dataset with negatives"},
      {"train.stage", KeyKind::kString, "pretrain | finetune | both"},
      {"train.init", KeyKind::kPath, "checkpoint to start from"},
      {"train.remine", KeyKind::kBool, "re-mine negatives with the pretrained model before fine-tuning"},
      {"merge.checkpoints", KeyKind::kPathList, "checkpoints to average"},
      {"merge.weights", KeyKind::kDoubleList, "merge weights (default equal)"},
      {"embed.checkpoint", KeyKind::kPath, "model checkpoint"},
      {"embed.input", KeyKind::kPath, "JSONL of {id, text[, instruction]}"},
      {"eval.input", KeyKind::kPath, "JSONL evaluation bundle"},
      {"eval.models", KeyKind::kPathList, "checkpoints, 'lexical' or 'untrained'"},
  };
  keys.insert(keys.end(), io.begin(), io.end());
  return keys;
}

const ConfigKey* find_key(std::string_view path) {
  for (const auto& k : config_keys()) {
    if (k.path == path) return &k;
  }
  return nullptr;
}

json::json_pointer pointer_of(const std::string& path) {
  std::string p = "/" + path;
  std::replace(p.begin(), p.end(), '.', '/');
  return json::json_pointer(p);
}

bool is_uint(const json& v) { return v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0); }

json resolve_path(const json& v, const fs::path& base_dir) {
  const auto s = v.get<std::string>();
  if (s.empty() || s == "lexical" || s == "untrained") return s;
  return fs::absolute(base_dir / s).lexically_normal().string();
}

json checked_value(const ConfigKey& key, const json& v, const fs::path& base_dir) {
  auto bad = [&]() -> ConfigError { return ConfigError("config key '" + key.path + "' has the wrong type"); };
  switch (key.kind) {
    case KeyKind::kUint:
      if (!is_uint(v)) throw bad();
      return v.get<std::uint64_t>();
    case KeyKind::kDouble:
      if (!v.is_number()) throw bad();
      return v.get<double>();
    case KeyKind::kBool:
      if (!v.is_boolean()) throw bad();
      return v;
    case KeyKind::kString:
      if (!v.is_string()) throw bad();
      return v;
    case KeyKind::kPath:
      if (!v.is_string()) throw bad();
      return resolve_path(v, base_dir);
    case KeyKind::kStringList:
    case KeyKind::kPathList: {
      if (!v.is_array()) throw bad();
      json out = json::array();
      for (const auto& e : v) {
        if (!e.is_string()) throw bad();
        out.push_back(key.kind == KeyKind::kPathList ? resolve_path(e, base_dir) : e);
      }
      return out;
    }
    case KeyKind::kDoubleList: {
      if (!v.is_array()) throw bad();
      for (const auto& e : v) {
        if (!e.is_number()) throw bad();
      }
      return v;
    }
  }
  throw bad();
}

void overlay_at(json& base, const json& layer, const std::string& prefix, const fs::path& base_dir) {
  for (const auto& [name, value] : layer.items()) {
    const std::string path = prefix.empty() ? name : prefix + "." + name;
    if (const auto* key = find_key(path)) {
      base[pointer_of(path)] = checked_value(*key, value, base_dir);
    } else if (value.is_object() && base.contains(pointer_of(path)) && base[pointer_of(path)].is_object()) {
      overlay_at(base, value, path, base_dir);
    } else {
      throw ConfigError("unknown config key '" + path + "'");
    }
  }
}

template <typename T>
T parse_number(const std::string& text, const std::string& flag) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw ConfigError("--" + flag + ": cannot parse '" + text + "'");
  return value;
}

json flag_value(const ConfigKey& key, const std::vector<std::string>& raw) {
  auto single = [&]() -> const std::string& {
    if (raw.size() != 1) throw ConfigError("--" + key.path + " takes one value");
    return raw.front();
  };
  switch (key.kind) {
    case KeyKind::kUint:
      return parse_number<std::uint64_t>(single(), key.path);
    case KeyKind::kDouble:
      return parse_number<double>(single(), key.path);
    case KeyKind::kBool: {
      const auto& s = single();
      if (s == "true" || s == "1") return true;
      if (s == "false" || s == "0") return false;
      throw ConfigError("--" + key.path + ": expected true or false, got '" + s + "'");
    }
    case KeyKind::kString:
    case KeyKind::kPath:
      return single();
    case KeyKind::kStringList:
    case KeyKind::kPathList:
      return raw;
    case KeyKind::kDoubleList: {
      json out = json::array();
      for (const auto& s : raw) out.push_back(parse_number<double>(s, key.path));
      return out;
    }
  }
  return nullptr;
}

json stage_json(const StageConfig& c) {
  json j = c;
  j.erase("stage");
  j.erase("seed");
  return j;
}

json encoder_json(const EncoderConfig& c) {
  json j = c;
  j.erase("seed");
  j.erase("vocab_size");
  return j;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// ---- subcommand plumbing ---------------------------------------------------

struct Context {
  json cfg;
  fs::path out_dir;
  std::uint64_t seed = 0;
  std::ostream* out = nullptr;
};

std::string str(const json& cfg, const std::string& path) { return cfg.at(pointer_of(path)).get<std::string>(); }

std::vector<std::string> str_list(const json& cfg, const std::string& path) {
  return cfg.at(pointer_of(path)).get<std::vector<std::string>>();
}

fs::path existing_file(const json& cfg, const std::string& path) {
  const auto p = str(cfg, path);
  if (p.empty()) throw ConfigError(path + " is required");
  if (!fs::is_regular_file(p)) throw ConfigError(path + ": no such file '" + p + "'");
  return p;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  f << text;
  if (!f) throw ConfigError("cannot write '" + path.string() + "'");
}

std::shared_ptr<const Embedder> model_embedder(const std::string& which, const Context& ctx) {
  if (which == "lexical") return std::make_shared<LexicalEmbedder>();
  if (which == "untrained") {
    auto enc = std::make_shared<const Encoder>(encoder_config_from(ctx.cfg));
    return std::make_shared<EncoderEmbedder>("untrained", std::move(enc));
  }
  if (!fs::is_regular_file(which)) throw ConfigError("no such checkpoint '" + which + "'");
  auto enc = std::make_shared<const Encoder>(load_checkpoint(which).to_encoder());
  return std::make_shared<EncoderEmbedder>(fs::path(which).stem().string(), std::move(enc));
}

MiningConfig mining_config_from(const json& cfg) {
  MiningConfig mc;
  mc.k = cfg.at("mining").at("k").get<std::size_t>();
  mc.percent_threshold = cfg.at("mining").at("percent_threshold").get<double>();
  return mc;
}

std::size_t report_mined(const MiningResult& r, std::ostream& out) {
  out << "mined " << r.examples.size() << " examples, " << r.flagged.size() << " without eligible negatives\n";
  return r.flagged.size();
}

void cmd_gen_data(const Context& ctx) {
  auto tc = toy_config_from(ctx.cfg);
  const auto& toy = ctx.cfg.at("toy");
  const auto train = generate_toy_corpus(tc, 0);
  auto held_cfg = tc;
  held_cfg.n_per_cluster = toy.at("held_out_per_cluster").get<std::size_t>();
  const auto held = generate_toy_corpus(held_cfg, 1);

  std::vector<RawExample> bundle;
  for (auto ex : held.pairs) {
    ex.extra["task"] = "toy_retrieval";
    bundle.push_back(std::move(ex));
  }
  for (auto ex : toy_classification_examples(held, toy.at("n_misleading").get<std::size_t>(),
                                             derive_seed(ctx.seed, "toy.classification"))) {
    ex.extra["task"] = "toy_classification";
    bundle.push_back(std::move(ex));
  }
  for (auto ex : toy_sts_examples(held, toy.at("sts_max_replaced").get<std::size_t>(),
                                  derive_seed(ctx.seed, "toy.sts"), true)) {
    ex.extra["task"] = "toy_sts";
    bundle.push_back(std::move(ex));
  }
  save_jsonl(ctx.out_dir / "train.jsonl", train.pairs);
  save_jsonl(ctx.out_dir / "eval.jsonl", bundle);
  *ctx.out << "wrote " << train.pairs.size() << " training pairs and " << bundle.size() << " evaluation examples\n";
}

void cmd_mine(const Context& ctx) {
  const auto examples = load_jsonl(existing_file(ctx.cfg, "mine.input"));
  auto mc = mining_config_from(ctx.cfg);
  for (const auto& t : str_list(ctx.cfg, "mining.teachers")) mc.teachers.push_back(model_embedder(t, ctx));
  const auto result = mine_dataset(examples, default_mining_pool(examples), mc);
  save_jsonl(ctx.out_dir / "mined.jsonl", result.examples);
  report_mined(result, *ctx.out);
}

void cmd_train(const Context& ctx) {
  const auto examples = load_jsonl(existing_file(ctx.cfg, "train.input"));
  const auto enc_cfg = encoder_config_from(ctx.cfg);
  const auto which = str(ctx.cfg, "train.stage");
  if (which != "pretrain" && which != "finetune" && which != "both") {
    throw ConfigError("train.stage must be pretrain, finetune or both");
  }
  std::optional<Checkpoint> parent;
  if (!str(ctx.cfg, "train.init").empty()) parent = load_checkpoint(existing_file(ctx.cfg, "train.init"));

  std::ostringstream trace;
  trace << "stage,step,loss,lr\n";
  auto run = [&](Stage stage, const std::vector<RawExample>& data) {
    const auto sc = stage_config_from(ctx.cfg, stage);
    const auto name = to_string(stage);
    char buf[96];
    StepCallback log = [&](const StepRecord& r) {
      std::snprintf(buf, sizeof buf, ",%zu,%.17g,%.17g\n", r.step, r.loss, r.lr);
      trace << name << buf;
    };
    const auto rows = stage_rows(data, stage);
    StageResult result;
    if (parent) {
      result = continue_training(*parent, enc_cfg, rows, sc, log);
    } else {
      Encoder model(enc_cfg);
      result = train_stage(model, rows, sc, log);
    }
    save_checkpoint(ctx.out_dir / (name + ".emlb"), result.checkpoint);
    const double last = result.loss_trace.empty() ? 0.0 : result.loss_trace.back();
    *ctx.out << name << ": " << result.loss_trace.size() << " steps, " << result.rejected_rows
             << " rows rejected, final loss " << last << ", checkpoint " << checkpoint_hash(result.checkpoint) << "\n";
    parent = std::move(result.checkpoint);
  };

  if (which == "finetune") {
    run(Stage::kFinetune, examples);
  } else {
    run(Stage::kPretrain, examples);
    if (which == "both") {
      auto data = examples;
      if (ctx.cfg.at("train").at("remine").get<bool>()) {
        auto mc = mining_config_from(ctx.cfg);
        auto teacher = std::make_shared<const Encoder>(parent->to_encoder());
        mc.teachers = {std::make_shared<EncoderEmbedder>("pretrain", std::move(teacher))};
        const auto mined = mine_dataset(examples, default_mining_pool(examples), mc);
        *ctx.out << "re-";
        report_mined(mined, *ctx.out);
        data = mined.examples;
      }
      run(Stage::kFinetune, data);
    }
  }
  write_text(ctx.out_dir / "loss_trace.csv", trace.str());
}

void cmd_merge(const Context& ctx) {
  const auto paths = str_list(ctx.cfg, "merge.checkpoints");
  if (paths.empty()) throw ConfigError("merge.checkpoints is required");
  std::vector<Checkpoint> cps;
  for (const auto& p : paths) {
    if (!fs::is_regular_file(p)) throw ConfigError("no such checkpoint '" + p + "'");
    cps.push_back(load_checkpoint(p));
  }
  const auto weights = ctx.cfg.at("merge").at("weights").get<std::vector<double>>();
  const auto merged = merge_checkpoints(cps, weights);
  save_checkpoint(ctx.out_dir / "merged.emlb", merged);
  *ctx.out << "merged " << cps.size() << " checkpoints into " << checkpoint_hash(merged) << "\n";
}

void cmd_embed(const Context& ctx) {
  const auto model = load_checkpoint(existing_file(ctx.cfg, "embed.checkpoint")).to_encoder();
  std::ifstream in(existing_file(ctx.cfg, "embed.input"));
  std::vector<json> ids;
  std::vector<std::string> texts;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(n, e.what());
    }
    if (!j.is_object() || !j.contains("id") || !j.contains("text") || !j["text"].is_string()) {
      throw ParseError(n, "expected an object with 'id' and string 'text'");
    }
    InstructedInput input{std::nullopt, j["text"].get<std::string>()};
    if (j.contains("instruction")) {
      if (!j["instruction"].is_string()) throw ParseError(n, "'instruction' must be a string");
      input.task_instruction = j["instruction"].get<std::string>();
    }
    ids.push_back(j["id"]);
    texts.push_back(render_input(input));
  }
  if (texts.empty()) throw ValidationError("embed input holds no texts");
  const auto vectors = model.embed_all(texts);
  std::ostringstream os;
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    os << json{{"id", ids[i]}, {"vector", vectors[i].values}}.dump() << "\n";
  }
  write_text(ctx.out_dir / "embeddings.jsonl", os.str());
  *ctx.out << "embedded " << texts.size() << " texts\n";
}

void cmd_eval(const Context& ctx) {
  const auto examples = load_jsonl(existing_file(ctx.cfg, "eval.input"));
  const auto specs = str_list(ctx.cfg, "eval.models");
  if (specs.empty()) throw ConfigError("eval.models is required");
  std::vector<std::string> names;
  std::vector<std::vector<TaskResult>> results;
  for (const auto& s : specs) {
    const auto model = model_embedder(s, ctx);
    if (std::find(names.begin(), names.end(), model->name()) != names.end()) {
      throw ConfigError("two evaluated models are both named '" + model->name() + "'");
    }
    names.push_back(model->name());
    results.push_back(evaluate(*model, examples));
  }
  const auto matrix = score_matrix(names, results);
  write_score_csv(ctx.out_dir / "scores.csv", matrix);
  const auto report = leaderboard_report(matrix) + "\n" + metrics_report(names, results);
  write_text(ctx.out_dir / "report.txt", report);
  *ctx.out << report;
}

struct Subcommand {
  std::string name;
  std::string help;
  std::vector<std::string> sections;
  void (*run)(const Context&);
};

const std::vector<Subcommand>& subcommands() {
  static const std::vector<Subcommand> all = {
      {"gen-data", "Write the toy training set and evaluation bundle", {"toy"}, cmd_gen_data},
      {"mine", "Attach mined hard negatives to a dataset", {"mining", "mine", "encoder"}, cmd_mine},
      {"train",
       "Run a training stage or the two-stage pipeline",
       {"encoder", "pretrain", "finetune", "mining", "train"},
       cmd_train},
      {"merge", "Average checkpoints", {"merge"}, cmd_merge},
      {"embed", "Embed a JSONL file of texts", {"embed"}, cmd_embed},
      {"eval", "Score models on an evaluation bundle", {"encoder", "eval"}, cmd_eval},
  };
  return all;
}

bool in_sections(const ConfigKey& key, const std::vector<std::string>& sections) {
  const auto dot = key.path.find('.');
  if (dot == std::string::npos) return true;
  const auto section = key.path.substr(0, dot);
  return std::find(sections.begin(), sections.end(), section) != sections.end();
}

const char* type_name(KeyKind kind) {
  switch (kind) {
    case KeyKind::kUint:
      return "UINT";
    case KeyKind::kDouble:
      return "FLOAT";
    case KeyKind::kBool:
      return "BOOL";
    case KeyKind::kString:
      return "TEXT";
    case KeyKind::kPath:
      return "PATH";
    case KeyKind::kStringList:
      return "TEXT,...";
    case KeyKind::kPathList:
      return "PATH,...";
    case KeyKind::kDoubleList:
      return "FLOAT,...";
  }
  return "TEXT";
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

int fail(std::ostream& err, const std::string& tag, int code, const std::string& message) {
  err << "emlab: error=" << tag << " exit=" << code << " " << one_line(message) << std::endl;
  return code;
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = build_keys();
  return keys;
}

json preset_config(std::string_view name) {
  const bool paper = name == "paper";
  if (!paper && name != "desk") throw ConfigError("unknown preset '" + std::string(name) + "'");
  const auto enc = paper ? EncoderConfig::llama_8b_reference() : EncoderConfig{};
  const ToyCorpusConfig toy;
  json cfg = {
      {"preset", std::string(name)},
      {"seed", 0},
      {"threads", 1},
      {"out", fs::current_path().string()},
      {"encoder", encoder_json(enc)},
      {"toy",
       {{"n_clusters", toy.n_clusters},
        {"n_per_cluster", toy.n_per_cluster},
        {"held_out_per_cluster", 16},
        {"vocab", toy.vocab},
        {"words_per_doc", toy.words_per_doc},
        {"words_per_query", toy.words_per_query},
        {"topic_fraction", toy.topic_fraction},
        {"instruction", toy.instruction},
        {"n_misleading", 4},
        {"sts_max_replaced", 2}}},
      {"mining", {{"k", paper ? 4 : 16}, {"percent_threshold", 0.95}, {"teachers", json::array({"lexical"})}}},
      {"pretrain", stage_json(paper ? StageConfig::paper_pretrain() : StageConfig::desk_pretrain())},
      {"finetune", stage_json(paper ? StageConfig::paper_finetune() : StageConfig::desk_finetune())},
      {"mine", {{"input", ""}}},
      {"train", {{"input", ""}, {"stage", "both"}, {"init", ""}, {"remine", true}}},
      {"merge", {{"checkpoints", json::array()}, {"weights", json::array()}}},
      {"embed", {{"checkpoint", ""}, {"input", ""}}},
      {"eval", {{"input", ""}, {"models", json::array()}}},
  };
  return cfg;
}

void overlay_config(json& base, const json& layer, const fs::path& base_dir) {
  if (!layer.is_object()) throw ConfigError("config must be a JSON object");
  overlay_at(base, layer, "", base_dir);
}

std::uint64_t derive_seed(std::uint64_t root, std::string_view subsystem) {
  std::uint64_t h = 1469598103934665603ull;
  for (const unsigned char c : subsystem) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return splitmix64(root ^ splitmix64(h));
}

EncoderConfig encoder_config_from(const json& cfg) {
  json j = cfg.at("encoder");
  j["vocab_size"] = kByteVocabSize;
  j["seed"] = derive_seed(cfg.at("seed").get<std::uint64_t>(), "encoder");
  auto c = j.get<EncoderConfig>();
  c.validate();
  return c;
}

StageConfig stage_config_from(const json& cfg, Stage stage) {
  const auto name = to_string(stage);
  json j = cfg.at(name);
  j["stage"] = name;
  j["seed"] = derive_seed(cfg.at("seed").get<std::uint64_t>(), name);
  auto c = j.get<StageConfig>();
  c.validate();
  return c;
}

ToyCorpusConfig toy_config_from(const json& cfg) {
  const auto& t = cfg.at("toy");
  ToyCorpusConfig c;
  c.seed = derive_seed(cfg.at("seed").get<std::uint64_t>(), "toy");
  t.at("n_clusters").get_to(c.n_clusters);
  t.at("n_per_cluster").get_to(c.n_per_cluster);
  t.at("vocab").get_to(c.vocab);
  t.at("words_per_doc").get_to(c.words_per_doc);
  t.at("words_per_query").get_to(c.words_per_query);
  t.at("topic_fraction").get_to(c.topic_fraction);
  t.at("instruction").get_to(c.instruction);
  return c;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Contrastive text-embedding training toolkit", "emlab"};
  app.require_subcommand(1);

  struct Parsed {
    std::string config;
    std::map<std::string, std::vector<std::string>> flags;
  };
  std::map<std::string, Parsed> parsed;
  for (const auto& sc : subcommands()) {
    auto* sub = app.add_subcommand(sc.name, sc.help);
    auto& p = parsed[sc.name];
    sub->add_option("--config", p.config, "JSON config file")->type_name("PATH");
    for (const auto& key : config_keys()) {
      if (!in_sections(key, sc.sections)) continue;
      auto* opt = sub->add_option("--" + key.path, p.flags[key.path], key.help)->type_name(type_name(key.kind));
      const bool list = key.kind == KeyKind::kStringList || key.kind == KeyKind::kPathList ||
                        key.kind == KeyKind::kDoubleList;
      if (list) {
        opt->delimiter(',');
      } else {
        opt->expected(1)->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
      }
    }
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    return fail(err, "usage", 1, e.what());
  }

  const auto* chosen = app.get_subcommands().front();
  const auto& sc = *std::find_if(subcommands().begin(), subcommands().end(),
                                 [&](const Subcommand& s) { return s.name == chosen->get_name(); });
  const auto& p = parsed.at(sc.name);
  try {
    // preset < config file < flags; the preset itself may come from either.
    json file_layer = json::object();
    fs::path file_dir = fs::current_path();
    if (!p.config.empty()) {
      std::ifstream f(p.config);
      if (!f) throw ConfigError("cannot read config '" + p.config + "'");
      try {
        file_layer = json::parse(f);
      } catch (const json::exception& e) {
        throw ConfigError("config '" + p.config + "': " + e.what());
      }
      file_dir = fs::absolute(p.config).parent_path();
    }
    std::string preset = "desk";
    if (file_layer.is_object() && file_layer.contains("preset") && file_layer["preset"].is_string()) {
      preset = file_layer["preset"].get<std::string>();
    }
    if (const auto& f = p.flags.at("preset"); !f.empty()) preset = f.back();

    json cfg = preset_config(preset);
    overlay_config(cfg, file_layer, file_dir);
    json flag_layer = json::object();
    for (const auto& [path, raw] : p.flags) {
      if (const auto* opt = chosen->get_option_no_throw("--" + path); opt == nullptr || opt->count() == 0) continue;
      flag_layer[pointer_of(path)] = flag_value(*find_key(path), raw);
    }
    overlay_config(cfg, flag_layer, fs::current_path());

    const auto threads = cfg.at("threads").get<std::uint64_t>();
    if (threads < 1) throw ConfigError("threads must be at least 1");
    kernels::set_num_threads(static_cast<int>(threads));

    Context ctx;
    ctx.cfg = cfg;
    ctx.seed = cfg.at("seed").get<std::uint64_t>();
    ctx.out_dir = str(cfg, "out");
    ctx.out = &out;
    fs::create_directories(ctx.out_dir);
    sc.run(ctx);
    return 0;
  } catch (const Error& e) {
    return fail(err, e.tag(), exit_code_for(e.kind()), e.what());
  } catch (const fs::filesystem_error& e) {
    return fail(err, "io", 1, e.what());
  } catch (const json::exception& e) {
    return fail(err, "config", 1, e.what());
  }
}

}  // namespace emlab
