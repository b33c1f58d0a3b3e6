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

#include "emlab/training.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "emlab/errors.hpp"

namespace emlab {
namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'E', 'M', 'L', 'B'};
constexpr std::uint8_t kFloat64 = 1;

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(std::string_view s) { out_.append(s); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(in_[pos_++]);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string_view bytes(std::uint64_t n) {
    need(n);
    const auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > in_.size() - pos_) throw ValidationError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::string_view in_;
  std::size_t pos_ = 0;
};

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (const unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

void check_rows(const std::vector<TrainingTriplet>& rows, std::size_t need, std::vector<const TrainingTriplet*>& kept,
                std::size_t& rejected) {
  for (const auto& r : rows) {
    if (r.negative_texts.size() >= need)
      kept.push_back(&r);
    else
      ++rejected;
  }
}

// The init seed is provenance, not architecture.
bool same_architecture(EncoderConfig a, const EncoderConfig& b) {
  a.seed = b.seed;
  return a == b;
}

}  // namespace

std::string to_string(Stage stage) { return stage == Stage::kPretrain ? "pretrain" : "finetune"; }

Stage parse_stage(std::string_view text) {
  if (text == "pretrain") return Stage::kPretrain;
  if (text == "finetune") return Stage::kFinetune;
  throw ConfigError("unknown stage '" + std::string(text) + "'");
}

void StageConfig::validate() const {
  if (!(peak_lr > 0.0) || !std::isfinite(peak_lr)) throw ConfigError("peak_lr must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (warmup_steps > n_steps) throw ConfigError("warmup_steps must not exceed n_steps");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (n_hard_negatives < 1) throw ConfigError("n_hard_negatives must be at least 1");
  LossConfig{temperature, loss_variant}.validate();
}

StageConfig StageConfig::paper_pretrain() {
  return StageConfig{Stage::kPretrain, 1e-5, 2048, 5773, 100, 0.01, 1, 0.02, LossVariant::kHnOnly, 0};
}

StageConfig StageConfig::paper_finetune() {
  return StageConfig{Stage::kFinetune, 2e-6, 128, 33668, 100, 0.01, 4, 0.02, LossVariant::kHnOnly, 0};
}

StageConfig StageConfig::desk_pretrain() {
  return StageConfig{Stage::kPretrain, 5e-4, 16, 600, 20, 0.01, 1, 0.02, LossVariant::kHnOnly, 0};
}

StageConfig StageConfig::desk_finetune() {
  return StageConfig{Stage::kFinetune, 2e-4, 8, 200, 20, 0.01, 4, 0.02, LossVariant::kHnOnly, 0};
}

void to_json(json& j, const StageConfig& c) {
  j = json{{"stage", to_string(c.stage)},
           {"peak_lr", c.peak_lr},
           {"batch_size", c.batch_size},
           {"n_steps", c.n_steps},
           {"warmup_steps", c.warmup_steps},
           {"weight_decay", c.weight_decay},
           {"n_hard_negatives", c.n_hard_negatives},
           {"temperature", c.temperature},
           {"loss_variant", to_string(c.loss_variant)},
           {"seed", c.seed}};
}

void from_json(const json& j, StageConfig& c) {
  c.stage = parse_stage(j.at("stage").get<std::string>());
  j.at("peak_lr").get_to(c.peak_lr);
  j.at("batch_size").get_to(c.batch_size);
  j.at("n_steps").get_to(c.n_steps);
  j.at("warmup_steps").get_to(c.warmup_steps);
  j.at("weight_decay").get_to(c.weight_decay);
  j.at("n_hard_negatives").get_to(c.n_hard_negatives);
  j.at("temperature").get_to(c.temperature);
  c.loss_variant = parse_loss_variant(j.at("loss_variant").get<std::string>());
  j.at("seed").get_to(c.seed);
}

double lr_at(std::size_t step, const StageConfig& c) {
  if (step > c.n_steps) {
    throw ContractError("step " + std::to_string(step) + " outside [0, " + std::to_string(c.n_steps) + "]");
  }
  if (step < c.warmup_steps) {
    return c.peak_lr * static_cast<double>(step) / static_cast<double>(c.warmup_steps);
  }
  if (c.n_steps == c.warmup_steps) return c.peak_lr;
  return c.peak_lr * static_cast<double>(c.n_steps - step) / static_cast<double>(c.n_steps - c.warmup_steps);
}

OptimizerState OptimizerState::for_parameters(const std::vector<NamedParameter>& params) {
  OptimizerState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.value.numel(), 0.0);
    s.v.emplace_back(p.value.numel(), 0.0);
  }
  return s;
}

void adamw_update(std::span<double> theta, std::span<const double> grad, std::span<double> m, std::span<double> v,
                  std::size_t t, double lr, double weight_decay, double beta1, double beta2, double eps) {
  if (grad.size() != theta.size() || m.size() != theta.size() || v.size() != theta.size()) {
    throw ContractError("adamw: parameter, gradient and moment sizes differ");
  }
  if (t < 1) throw ContractError("adamw: update count starts at 1");
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
    const double m_hat = m[i] / c1;
    const double v_hat = v[i] / c2;
    theta[i] -= lr * (m_hat / (std::sqrt(v_hat) + eps) + weight_decay * theta[i]);
  }
}

void adamw_step(std::vector<NamedParameter>& params, OptimizerState& state, double lr, double weight_decay) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ContractError("adamw: optimizer state does not match the parameter list");
  }
  const std::size_t t = state.step + 1;
  std::vector<double> zeros;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].value;
    std::span<const double> g;
    if (p.has_grad()) {
      g = p.grad();
    } else {
      zeros.assign(p.numel(), 0.0);
      g = zeros;
    }
    adamw_update(p.mutable_data(), g, state.m[i], state.v[i], t, lr, weight_decay, state.beta1, state.beta2,
                 state.eps);
  }
  state.step = t;
}

// ---- checkpoints -----------------------------------------------------------

Checkpoint Checkpoint::from_encoder(const Encoder& encoder, json metadata) {
  Checkpoint c;
  c.config = encoder.config();
  c.metadata = std::move(metadata);
  for (const auto& p : encoder.parameters()) {
    const auto d = p.value.data();
    c.parameters.push_back({p.name, p.value.shape(), std::vector<double>(d.begin(), d.end())});
  }
  return c;
}

Encoder Checkpoint::to_encoder() const {
  std::vector<NamedParameter> params;
  params.reserve(parameters.size());
  for (const auto& p : parameters) params.push_back({p.name, Tensor::from(p.shape, p.values, true)});
  return Encoder(config, std::move(params));
}

const ParameterArray* Checkpoint::find(std::string_view name) const {
  for (const auto& p : parameters)
    if (p.name == name) return &p;
  return nullptr;
}

std::string serialize_checkpoint(const Checkpoint& c) {
  Writer w;
  w.bytes(std::string_view(kMagic, 4));
  w.u32(Checkpoint::kFormatVersion);
  const auto blob = json{{"config", c.config}, {"metadata", c.metadata}}.dump();
  w.u64(blob.size());
  w.bytes(blob);
  w.u32(static_cast<std::uint32_t>(c.parameters.size()));
  for (const auto& p : c.parameters) {
    w.u32(static_cast<std::uint32_t>(p.name.size()));
    w.bytes(p.name);
    w.u8(kFloat64);
    w.u32(static_cast<std::uint32_t>(p.shape.size()));
    for (const auto e : p.shape) w.u64(e);
    for (const double x : p.values) w.f64(x);
  }
  return w.take();
}

Checkpoint parse_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.bytes(4) != std::string_view(kMagic, 4)) throw ValidationError("not a checkpoint file (bad magic)");
  const auto version = r.u32();
  if (version != Checkpoint::kFormatVersion) {
    throw ValidationError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint c;
  try {
    const auto blob = json::parse(r.bytes(r.u64()));
    c.config = blob.at("config").get<EncoderConfig>();
    c.metadata = blob.at("metadata");
  } catch (const json::exception& e) {
    throw ValidationError(std::string("checkpoint header: ") + e.what());
  }
  const auto count = r.u32();
  std::set<std::string> names;
  for (std::uint32_t i = 0; i < count; ++i) {
    ParameterArray p;
    p.name = std::string(r.bytes(r.u32()));
    if (!names.insert(p.name).second) throw ValidationError("duplicate parameter '" + p.name + "'");
    if (r.u8() != kFloat64) throw ValidationError("parameter '" + p.name + "' has an unknown dtype");
    const auto rank = r.u32();
    for (std::uint32_t k = 0; k < rank; ++k) p.shape.push_back(r.u64());
    const auto n = numel(p.shape);
    if (n > bytes.size() / 8) throw ValidationError("checkpoint truncated in parameter '" + p.name + "'");
    p.values.resize(n);
    for (auto& x : p.values) x = r.f64();
    c.parameters.push_back(std::move(p));
  }
  if (!r.done()) throw ValidationError("trailing bytes after checkpoint payload");
  const auto layout = Encoder::parameter_layout(c.config);
  if (layout.size() != c.parameters.size()) throw ValidationError("parameter count does not match the config");
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (layout[i].first != c.parameters[i].name || layout[i].second != c.parameters[i].shape) {
      throw ValidationError("parameter '" + c.parameters[i].name + "' does not match the config layout");
    }
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const auto bytes = serialize_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ConfigError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return parse_checkpoint(bytes);
}

std::string checkpoint_hash(const Checkpoint& checkpoint) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a(serialize_checkpoint(checkpoint))));
  return buf;
}

Checkpoint merge_checkpoints(const std::vector<Checkpoint>& checkpoints, std::vector<double> weights) {
  const std::size_t n = checkpoints.size();
  if (n < 2) throw ValidationError("merging needs at least two checkpoints");
  if (weights.empty()) weights.assign(n, 1.0 / static_cast<double>(n));
  if (weights.size() != n) throw ValidationError("one weight per checkpoint is required");
  double total = 0.0;
  for (const double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ValidationError("merge weights must be non-negative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) throw ValidationError("merge weights must sum to 1");

  const auto& base = checkpoints.front();
  for (std::size_t c = 1; c < n; ++c) {
    const auto& other = checkpoints[c].parameters;
    const std::size_t common = std::min(other.size(), base.parameters.size());
    for (std::size_t i = 0; i < common; ++i) {
      const auto& a = base.parameters[i];
      if (a.name != other[i].name || a.shape != other[i].shape) {
        throw ValidationError("parameter '" + a.name + "' does not match '" + other[i].name + "' in checkpoint " +
                              std::to_string(c));
      }
    }
    if (other.size() != base.parameters.size()) {
      const auto& extra = other.size() > common ? other[common] : base.parameters[common];
      throw ValidationError("parameter '" + extra.name + "' is missing from one of the checkpoints");
    }
    if (!same_architecture(checkpoints[c].config, base.config)) {
      throw ValidationError("checkpoint " + std::to_string(c) + " has a different encoder config");
    }
  }

  Checkpoint out;
  out.config = base.config;
  json sources = json::array();
  for (const auto& c : checkpoints) sources.push_back(checkpoint_hash(c));
  out.metadata = json{{"merge", {{"sources", sources}, {"weights", weights}}}};
  for (std::size_t i = 0; i < base.parameters.size(); ++i) {
    ParameterArray p{base.parameters[i].name, base.parameters[i].shape,
                     std::vector<double>(base.parameters[i].values.size())};
    // Extended precision so the result is rounded once.
    for (std::size_t k = 0; k < p.values.size(); ++k) {
      long double acc = 0.0L;
      for (std::size_t c = 0; c < n; ++c) {
        acc += static_cast<long double>(weights[c]) * checkpoints[c].parameters[i].values[k];
      }
      p.values[k] = static_cast<double>(acc);
    }
    out.parameters.push_back(std::move(p));
  }
  return out;
}

// ---- training loop ---------------------------------------------------------

std::vector<TrainingTriplet> stage_rows(const std::vector<RawExample>& examples, Stage stage) {
  std::vector<TrainingTriplet> rows;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    if (stage == Stage::kPretrain && ex.family != TaskFamily::kRetrieval) continue;
    try {
      for (auto& t : build_triplets(ex)) rows.push_back(std::move(t));
    } catch (const ValidationError& e) {
      throw ValidationError("example " + std::to_string(i) + ": " + e.what());
    }
  }
  return rows;
}

StageResult train_stage(Encoder& model, const std::vector<TrainingTriplet>& rows, const StageConfig& config,
                        const StepCallback& on_step) {
  config.validate();
  StageResult result;
  std::vector<const TrainingTriplet*> usable;
  check_rows(rows, config.n_hard_negatives, usable, result.rejected_rows);
  if (config.n_steps > 0 && usable.size() < config.batch_size) {
    throw ValidationError("only " + std::to_string(usable.size()) + " rows have at least " +
                          std::to_string(config.n_hard_negatives) + " hard negatives; batch size is " +
                          std::to_string(config.batch_size));
  }

  const LossConfig loss_cfg{config.temperature, config.loss_variant};
  const std::size_t b = config.batch_size;
  const std::size_t k = config.n_hard_negatives;
  const std::size_t per_epoch = config.n_steps > 0 ? usable.size() / b : 0;
  model.set_trainable(true);
  auto optimizer = OptimizerState::for_parameters(model.parameters());
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(usable.size());
  std::vector<std::vector<std::size_t>> chosen(usable.size());
  result.loss_trace.reserve(config.n_steps);

  for (std::size_t step = 0; step < config.n_steps; ++step) {
    const std::size_t slot = step % per_epoch;
    if (slot == 0) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), rng);
      // Rows with a larger negative pool contribute a fresh subset each epoch.
      for (std::size_t r = 0; r < usable.size(); ++r) {
        auto& pick = chosen[r];
        pick.resize(usable[r]->negative_texts.size());
        std::iota(pick.begin(), pick.end(), std::size_t{0});
        if (pick.size() > k) {
          std::shuffle(pick.begin(), pick.end(), rng);
          pick.resize(k);
          std::sort(pick.begin(), pick.end());
        }
      }
    }
    // One packed forward pass: queries, then positives, then negatives.
    std::vector<std::string> texts;
    texts.reserve(b * (2 + k));
    for (std::size_t r = 0; r < b; ++r) texts.push_back(usable[order[slot * b + r]]->query_text);
    for (std::size_t r = 0; r < b; ++r) texts.push_back(usable[order[slot * b + r]]->positive_text);
    for (std::size_t r = 0; r < b; ++r) {
      const std::size_t row = order[slot * b + r];
      for (const auto n : chosen[row]) texts.push_back(usable[row]->negative_texts[n]);
    }
    const auto emb = model.embed_texts(texts);
    std::vector<std::size_t> qi(b), pi(b), ni(b * k);
    std::iota(qi.begin(), qi.end(), std::size_t{0});
    std::iota(pi.begin(), pi.end(), b);
    std::iota(ni.begin(), ni.end(), 2 * b);
    const auto batch = ContrastiveBatch::with_uniform_negatives(gather_rows(emb, qi), gather_rows(emb, pi),
                                                                gather_rows(emb, ni), k);
    const auto loss = loss_batch(batch, loss_cfg);
    const double value = loss.item();
    if (!std::isfinite(value)) {
      throw NumericError("non-finite loss at step " + std::to_string(step + 1));
    }
    model.zero_grad();
    backward(loss);
    const double lr = lr_at(step + 1, config);
    adamw_step(model.parameters(), optimizer, lr, config.weight_decay);
    result.loss_trace.push_back(value);
    if (on_step) on_step(StepRecord{step + 1, value, lr});
  }
  model.zero_grad();
  result.checkpoint = Checkpoint::from_encoder(
      model, json{{"stage", to_string(config.stage)}, {"step", config.n_steps}, {"seed", config.seed},
                  {"stage_config", config}});
  return result;
}

StageResult continue_training(const Checkpoint& parent, const EncoderConfig& expected,
                              const std::vector<TrainingTriplet>& rows, const StageConfig& config,
                              const StepCallback& on_step) {
  if (!same_architecture(parent.config, expected)) {
    throw ValidationError("parent checkpoint architecture differs from the requested encoder config");
  }
  // Start from exactly what a reader of the parent file would see.
  auto model = parse_checkpoint(serialize_checkpoint(parent)).to_encoder();
  auto result = train_stage(model, rows, config, on_step);
  result.checkpoint.metadata["parent"] = checkpoint_hash(parent);
  return result;
}

TwoStageResult run_two_stage(const EncoderConfig& encoder, const StageConfig& pretrain,
                             const std::vector<TrainingTriplet>& pretrain_rows, const StageConfig& finetune,
                             const std::vector<TrainingTriplet>& finetune_rows, const StepCallback& on_step) {
  pretrain.validate();
  finetune.validate();
  if (pretrain.stage != Stage::kPretrain || finetune.stage != Stage::kFinetune) {
    throw ValidationError("two-stage training expects a pretrain config followed by a finetune config");
  }
  TwoStageResult out;
  Encoder model(encoder);
  out.pretrain = train_stage(model, pretrain_rows, pretrain, on_step);
  out.finetune = continue_training(out.pretrain.checkpoint, encoder, finetune_rows, finetune, on_step);
  return out;
}

}  // namespace emlab
