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
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emlab/dataio.hpp"
#include "emlab/encoder.hpp"
#include "emlab/losses.hpp"

namespace emlab {

enum class Stage { kPretrain, kFinetune };

std::string to_string(Stage stage);
Stage parse_stage(std::string_view text);

struct StageConfig {
  Stage stage = Stage::kPretrain;
  double peak_lr = 1e-5;
  std::size_t batch_size = 2048;
  std::size_t n_steps = 5773;
  std::size_t warmup_steps = 100;
  double weight_decay = 0.01;
  std::size_t n_hard_negatives = 1;
  double temperature = 0.02;
  LossVariant loss_variant = LossVariant::kHnOnly;
  std::uint64_t seed = 0;

  /// Throws ConfigError.
  void validate() const;

  /// Published hyperparameters of the 8B run, kept verbatim.
  static StageConfig paper_pretrain();
  static StageConfig paper_finetune();
  /// Small settings that train the toy encoder on one core in minutes.
  static StageConfig desk_pretrain();
  static StageConfig desk_finetune();

  bool operator==(const StageConfig&) const = default;
};

void to_json(nlohmann::json& j, const StageConfig& c);
void from_json(const nlohmann::json& j, StageConfig& c);

/// Linear warmup from 0 to peak_lr, then linear decay to 0 at n_steps.
double lr_at(std::size_t step, const StageConfig& config);

struct OptimizerState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  static OptimizerState for_parameters(const std::vector<NamedParameter>& params);
};

/// One bias-corrected AdamW update with decoupled decay on raw buffers;
/// `t` is the 1-based update count.
void adamw_update(std::span<double> theta, std::span<const double> grad, std::span<double> m,
                  std::span<double> v, std::size_t t, double lr, double weight_decay, double beta1,
                  double beta2, double eps);

/// Applies adamw_update to every parameter using its accumulated gradient
/// (zero when none was recorded) and advances state.step.
void adamw_step(std::vector<NamedParameter>& params, OptimizerState& state, double lr, double weight_decay);

// ---- checkpoints -----------------------------------------------------------

struct ParameterArray {
  std::string name;
  Shape shape;
  std::vector<double> values;

  bool operator==(const ParameterArray&) const = default;
};

struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  EncoderConfig config;
  std::vector<ParameterArray> parameters;
  nlohmann::json metadata = nlohmann::json::object();

  static Checkpoint from_encoder(const Encoder& encoder, nlohmann::json metadata = nlohmann::json::object());
  Encoder to_encoder() const;
  const ParameterArray* find(std::string_view name) const;

  bool operator==(const Checkpoint&) const = default;
};

/// "EMLB", u32 version, u64-length-prefixed JSON {config, metadata}, u32
/// parameter count, then per parameter: u32-length-prefixed name, u8 dtype
/// (1 = float64), u32 rank, u64 extents, payload. Little-endian throughout.
std::string serialize_checkpoint(const Checkpoint& checkpoint);
/// Throws ValidationError on malformed bytes or parameters that do not match
/// the stored configuration.
Checkpoint parse_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// FNV-1a 64 of the serialized bytes as 16 hex digits.
std::string checkpoint_hash(const Checkpoint& checkpoint);

/// Weighted per-parameter mean. Empty `weights` means equal weights.
Checkpoint merge_checkpoints(const std::vector<Checkpoint>& checkpoints, std::vector<double> weights = {});

// ---- training loop ---------------------------------------------------------

struct StepRecord {
  std::size_t step = 0;  // 1-based
  double loss = 0.0;
  double lr = 0.0;
};

struct StageResult {
  Checkpoint checkpoint;
  std::vector<double> loss_trace;
  std::size_t rejected_rows = 0;
};

using StepCallback = std::function<void(const StepRecord&)>;

/// Runs config.n_steps optimizer steps on `model` in place. Rows with fewer
/// than n_hard_negatives negatives are dropped. Batches come from a seeded
/// per-epoch permutation with the last partial batch dropped; a row with a
/// larger negative pool uses a seeded subset of n_hard_negatives of it, drawn
/// again each epoch and kept in pool order.
StageResult train_stage(Encoder& model, const std::vector<TrainingTriplet>& rows, const StageConfig& config,
                        const StepCallback& on_step = {});

/// Builds training rows for a stage: pretraining keeps retrieval examples
/// only, fine-tuning uses every family.
std::vector<TrainingTriplet> stage_rows(const std::vector<RawExample>& examples, Stage stage);

struct TwoStageResult {
  StageResult pretrain;
  StageResult finetune;
};

/// Stage 2 starts from the stage-1 checkpoint after a serialize/parse round
/// trip and records the parent hash in its metadata.
TwoStageResult run_two_stage(const EncoderConfig& encoder, const StageConfig& pretrain,
                             const std::vector<TrainingTriplet>& pretrain_rows, const StageConfig& finetune,
                             const std::vector<TrainingTriplet>& finetune_rows, const StepCallback& on_step = {});

/// Continues training from `parent`, whose architecture must equal `expected`.
StageResult continue_training(const Checkpoint& parent, const EncoderConfig& expected,
                              const std::vector<TrainingTriplet>& rows, const StageConfig& config,
                              const StepCallback& on_step = {});

}  // namespace emlab
