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

#include "emlab/encoder.hpp"

#include <random>

#include "emlab/errors.hpp"

namespace emlab {

namespace {

constexpr std::string_view kInstructPrefix = "Instruct: ";
constexpr std::string_view kQuerySeparator = "\nQuery: ";

// Tensors per transformer block, in layout order.
constexpr std::size_t kPerLayer = 9;
enum LayerSlot { kAttnNorm, kWq, kWk, kWv, kWo, kFfnNorm, kWGate, kWUp, kWDown };

bool is_norm_gain(std::string_view name) {
  return name.ends_with("norm");
}

}  // namespace

std::string to_string(AttentionMode mode) {
  return mode == AttentionMode::kCausal ? "causal" : "bidirectional";
}

AttentionMode parse_attention_mode(std::string_view text) {
  if (text == "causal") return AttentionMode::kCausal;
  if (text == "bidirectional") return AttentionMode::kBidirectional;
  throw ConfigError("unknown attention mode '" + std::string(text) + "'");
}

void EncoderConfig::validate() const {
  if (n_layers < 1) throw ConfigError("encoder.n_layers must be >= 1");
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0)
    throw ConfigError("encoder.d_model must be a positive multiple of encoder.n_heads");
  if ((d_model / n_heads) % 2 != 0) throw ConfigError("encoder head dimension must be even for rotary positions");
  if (d_ff == 0) throw ConfigError("encoder.d_ff must be positive");
  if (!(rope_base > 1.0)) throw ConfigError("encoder.rope_base must exceed 1");
  if (vocab_size < kByteVocabSize)
    throw ConfigError("encoder.vocab_size must cover the byte vocabulary (" + std::to_string(kByteVocabSize) + ")");
  if (max_seq_len < 1) throw ConfigError("encoder.max_seq_len must be >= 1");
  if (!(norm_eps > 0.0)) throw ConfigError("encoder.norm_eps must be positive");
}

EncoderConfig EncoderConfig::llama_8b_reference() {
  EncoderConfig c;
  c.n_layers = 32;
  c.d_model = 4096;
  c.n_heads = 32;
  c.d_ff = 14336;
  c.rope_base = 500000.0;
  c.vocab_size = 128256;
  c.max_seq_len = 512;
  c.norm_eps = 1e-5;
  return c;
}

void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = nlohmann::json{{"n_layers", c.n_layers},       {"d_model", c.d_model},
                     {"n_heads", c.n_heads},         {"d_ff", c.d_ff},
                     {"rope_base", c.rope_base},     {"attention_mode", to_string(c.attention_mode)},
                     {"vocab_size", c.vocab_size},   {"max_seq_len", c.max_seq_len},
                     {"norm_eps", c.norm_eps},       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, EncoderConfig& c) {
  j.at("n_layers").get_to(c.n_layers);
  j.at("d_model").get_to(c.d_model);
  j.at("n_heads").get_to(c.n_heads);
  j.at("d_ff").get_to(c.d_ff);
  j.at("rope_base").get_to(c.rope_base);
  c.attention_mode = parse_attention_mode(j.at("attention_mode").get<std::string>());
  j.at("vocab_size").get_to(c.vocab_size);
  j.at("max_seq_len").get_to(c.max_seq_len);
  j.at("norm_eps").get_to(c.norm_eps);
  j.at("seed").get_to(c.seed);
}

std::string render_input(const InstructedInput& input) {
  if (!input.task_instruction) return input.body;
  std::string out;
  out.reserve(kInstructPrefix.size() + input.task_instruction->size() + kQuerySeparator.size() +
              input.body.size());
  out.append(kInstructPrefix).append(*input.task_instruction).append(kQuerySeparator).append(input.body);
  return out;
}

InstructedInput parse_rendered(std::string_view rendered) {
  if (rendered.starts_with(kInstructPrefix)) {
    const auto sep = rendered.find(kQuerySeparator, kInstructPrefix.size());
    if (sep != std::string_view::npos) {
      return InstructedInput{
          std::string(rendered.substr(kInstructPrefix.size(), sep - kInstructPrefix.size())),
          std::string(rendered.substr(sep + kQuerySeparator.size()))};
    }
  }
  return InstructedInput{std::nullopt, std::string(rendered)};
}

std::vector<std::size_t> tokenize(std::string_view text, std::size_t max_seq_len) {
  if (max_seq_len == 0) throw ConfigError("max_seq_len must be >= 1");
  std::vector<std::size_t> ids;
  ids.push_back(kBosToken);
  if (max_seq_len == 1) return ids;
  const std::size_t room = std::min(text.size(), max_seq_len - 2);
  for (std::size_t i = 0; i < room; ++i) ids.push_back(static_cast<unsigned char>(text[i]));
  ids.push_back(kEosToken);
  return ids;
}

std::vector<std::pair<std::string, Shape>> Encoder::parameter_layout(const EncoderConfig& c) {
  std::vector<std::pair<std::string, Shape>> layout;
  layout.emplace_back("tok_embedding", Shape{c.vocab_size, c.d_model});
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    layout.emplace_back(p + "attn_norm", Shape{c.d_model});
    layout.emplace_back(p + "wq", Shape{c.d_model, c.d_model});
    layout.emplace_back(p + "wk", Shape{c.d_model, c.d_model});
    layout.emplace_back(p + "wv", Shape{c.d_model, c.d_model});
    layout.emplace_back(p + "wo", Shape{c.d_model, c.d_model});
    layout.emplace_back(p + "ffn_norm", Shape{c.d_model});
    layout.emplace_back(p + "w_gate", Shape{c.d_model, c.d_ff});
    layout.emplace_back(p + "w_up", Shape{c.d_model, c.d_ff});
    layout.emplace_back(p + "w_down", Shape{c.d_ff, c.d_model});
  }
  layout.emplace_back("final_norm", Shape{c.d_model});
  return layout;
}

Encoder::Encoder(EncoderConfig config) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(config_.seed);
  std::normal_distribution<double> init(0.0, 0.02);
  for (auto& [name, shape] : parameter_layout(config_)) {
    std::vector<double> values(shape_numel(shape));
    if (is_norm_gain(name))
      std::fill(values.begin(), values.end(), 1.0);
    else
      for (auto& v : values) v = init(rng);
    params_.push_back({name, Tensor::from(shape, std::move(values), true)});
  }
}

Encoder::Encoder(EncoderConfig config, std::vector<NamedParameter> parameters)
    : config_(config), params_(std::move(parameters)) {
  config_.validate();
  const auto layout = parameter_layout(config_);
  if (layout.size() != params_.size())
    throw ValidationError("expected " + std::to_string(layout.size()) + " parameters, got " +
                          std::to_string(params_.size()));
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (params_[i].name != layout[i].first)
      throw ValidationError("parameter " + std::to_string(i) + " is '" + params_[i].name + "', expected '" +
                            layout[i].first + "'");
    if (params_[i].value.shape() != layout[i].second)
      throw ValidationError("parameter '" + params_[i].name + "' has shape " +
                            shape_str(params_[i].value.shape()) + ", expected " + shape_str(layout[i].second));
  }
}

Tensor& Encoder::parameter(std::string_view name) {
  for (auto& p : params_)
    if (p.name == name) return p.value;
  throw ValidationError("no parameter named '" + std::string(name) + "'");
}

Encoder Encoder::clone() const {
  std::vector<NamedParameter> copy;
  for (const auto& p : params_) {
    auto t = p.value.detach();
    t.set_requires_grad(p.value.requires_grad());
    copy.push_back({p.name, t});
  }
  return Encoder(config_, std::move(copy));
}

void Encoder::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

void Encoder::set_trainable(bool on) {
  for (auto& p : params_) p.value.set_requires_grad(on);
}

Tensor Encoder::forward_packed(const std::vector<std::vector<std::size_t>>& sequences,
                               std::vector<std::size_t>& offsets) const {
  if (sequences.empty()) throw EmptyInputError("encode: empty batch");
  offsets.assign(1, 0);
  std::vector<std::size_t> ids, positions;
  for (const auto& seq : sequences) {
    if (seq.empty()) throw EmptyInputError("encode: empty token sequence");
    if (seq.size() > config_.max_seq_len)
      throw DimensionError("encode: sequence of " + std::to_string(seq.size()) + " tokens exceeds max_seq_len " +
                           std::to_string(config_.max_seq_len));
    for (std::size_t i = 0; i < seq.size(); ++i) {
      ids.push_back(seq[i]);
      positions.push_back(i);
    }
    offsets.push_back(ids.size());
  }

  const bool causal = config_.attention_mode == AttentionMode::kCausal;
  const double eps = config_.norm_eps;
  Tensor x = embedding_lookup(params_[0].value, ids);
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    const auto p = [&](LayerSlot slot) -> const Tensor& { return params_[1 + l * kPerLayer + slot].value; };
    Tensor h = rms_norm(x, p(kAttnNorm), eps);
    Tensor q = rope_apply(matmul(h, p(kWq)), positions, config_.n_heads, config_.rope_base);
    Tensor k = rope_apply(matmul(h, p(kWk)), positions, config_.n_heads, config_.rope_base);
    Tensor v = matmul(h, p(kWv));
    x = add(x, matmul(attention(q, k, v, offsets, config_.n_heads, causal), p(kWo)));
    Tensor h2 = rms_norm(x, p(kFfnNorm), eps);
    Tensor gated = mul(silu(matmul(h2, p(kWGate))), matmul(h2, p(kWUp)));
    x = add(x, matmul(gated, p(kWDown)));
  }
  return rms_norm(x, params_.back().value, eps);
}

Tensor Encoder::encode(std::span<const std::size_t> tokens) const {
  if (tokens.empty()) throw EmptyInputError("encode: empty token sequence");
  std::vector<std::size_t> offsets;
  return forward_packed({std::vector<std::size_t>(tokens.begin(), tokens.end())}, offsets);
}

Tensor Encoder::embed_token_batch(const std::vector<std::vector<std::size_t>>& sequences) const {
  std::vector<std::size_t> offsets;
  Tensor hidden = forward_packed(sequences, offsets);
  return segment_mean(hidden, offsets);
}

Tensor Encoder::embed_texts(const std::vector<std::string>& texts) const {
  std::vector<std::vector<std::size_t>> seqs;
  seqs.reserve(texts.size());
  for (const auto& t : texts) seqs.push_back(tokenize(t, config_.max_seq_len));
  return embed_token_batch(seqs);
}

EmbeddingVector Encoder::embed(const InstructedInput& input) const {
  NoGradGuard no_grad;
  const auto pooled = embed_texts({render_input(input)});
  return EmbeddingVector{std::vector<double>(pooled.data().begin(), pooled.data().end())};
}

std::vector<EmbeddingVector> Encoder::embed_all(const std::vector<std::string>& texts,
                                                std::size_t chunk) const {
  NoGradGuard no_grad;
  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  const std::size_t d = config_.d_model;
  for (std::size_t start = 0; start < texts.size(); start += chunk) {
    const std::size_t end = std::min(texts.size(), start + chunk);
    const auto pooled = embed_texts(std::vector<std::string>(texts.begin() + start, texts.begin() + end));
    const auto values = pooled.data();
    for (std::size_t r = 0; r < end - start; ++r)
      out.push_back(EmbeddingVector{std::vector<double>(values.begin() + r * d, values.begin() + (r + 1) * d)});
  }
  return out;
}

}  // namespace emlab
