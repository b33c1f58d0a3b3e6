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
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "emlab/tensor.hpp"

namespace emlab {

enum class AttentionMode { kCausal, kBidirectional };

std::string to_string(AttentionMode mode);
AttentionMode parse_attention_mode(std::string_view text);

// Byte-level vocabulary: ids 0..255 are raw UTF-8 bytes, then the specials.
inline constexpr std::size_t kBosToken = 256;
inline constexpr std::size_t kEosToken = 257;
inline constexpr std::size_t kByteVocabSize = 258;

struct EncoderConfig {
  std::size_t n_layers = 2;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t d_ff = 128;
  double rope_base = 10000.0;
  AttentionMode attention_mode = AttentionMode::kBidirectional;
  std::size_t vocab_size = kByteVocabSize;
  std::size_t max_seq_len = 512;
  double norm_eps = 1e-6;
  std::uint64_t seed = 0;

  /// Throws ConfigError when the architecture is inconsistent.
  void validate() const;

  /// Llama-3.1-8B dimensions, kept for reference; far too large to train here.
  static EncoderConfig llama_8b_reference();

  bool operator==(const EncoderConfig&) const = default;
};

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);

/// A text body with an optional task instruction.
struct InstructedInput {
  std::optional<std::string> task_instruction;
  std::string body;

  bool operator==(const InstructedInput&) const = default;
};

/// "Instruct: {instruction}\nQuery: {body}" when an instruction is present,
/// otherwise the body unchanged.
std::string render_input(const InstructedInput& input);

/// Inverse of render_input for bodies that do not themselves start with an
/// "Instruct: " line.
InstructedInput parse_rendered(std::string_view rendered);

/// BOS + UTF-8 bytes + EOS, truncating the byte run so the result never
/// exceeds max_seq_len.
std::vector<std::size_t> tokenize(std::string_view text, std::size_t max_seq_len);

struct EmbeddingVector {
  std::vector<double> values;
};

struct NamedParameter {
  std::string name;
  Tensor value;
};

/// Llama-style transformer encoder: pre-RMSNorm blocks with rotary multi-head
/// attention and a SwiGLU feed-forward, followed by a final RMSNorm and mean
/// pooling. Only the attention mask differs between the two modes.
class Encoder {
 public:
  /// Fresh model, N(0, 0.02) weights and unit norm gains drawn from config.seed.
  explicit Encoder(EncoderConfig config);
  /// Model assembled from existing values; names and shapes must match config.
  Encoder(EncoderConfig config, std::vector<NamedParameter> parameters);

  Encoder(const Encoder&) = delete;
  Encoder& operator=(const Encoder&) = delete;
  Encoder(Encoder&&) = default;
  Encoder& operator=(Encoder&&) = default;

  const EncoderConfig& config() const { return config_; }
  std::vector<NamedParameter>& parameters() { return params_; }
  const std::vector<NamedParameter>& parameters() const { return params_; }
  Tensor& parameter(std::string_view name);

  /// Deep copy with independent parameter storage.
  Encoder clone() const;
  void zero_grad();
  void set_trainable(bool on);

  /// Final hidden states [L x d_model] for one token sequence.
  Tensor encode(std::span<const std::size_t> tokens) const;
  /// Mean-pooled embeddings [S x d_model] for a batch of token sequences,
  /// differentiable with respect to the parameters.
  Tensor embed_token_batch(const std::vector<std::vector<std::size_t>>& sequences) const;
  /// Tokenizes already-rendered texts and embeds them as one batch.
  Tensor embed_texts(const std::vector<std::string>& texts) const;

  EmbeddingVector embed(const InstructedInput& input) const;
  /// Inference-only embeddings of rendered texts, processed in chunks.
  std::vector<EmbeddingVector> embed_all(const std::vector<std::string>& texts,
                                         std::size_t chunk = 64) const;

  /// Canonical parameter names and shapes for a configuration.
  static std::vector<std::pair<std::string, Shape>> parameter_layout(const EncoderConfig& config);

 private:
  Tensor forward_packed(const std::vector<std::vector<std::size_t>>& sequences,
                        std::vector<std::size_t>& offsets) const;

  EncoderConfig config_;
  std::vector<NamedParameter> params_;
};

}  // namespace emlab
