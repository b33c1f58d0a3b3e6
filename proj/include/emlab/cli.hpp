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

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "emlab/dataio.hpp"
#include "emlab/encoder.hpp"
#include "emlab/training.hpp"

namespace emlab {

// Every setting the command line understands. Keys are dotted paths
// ("pretrain.peak_lr"); the same path names the config-file entry and the
// flag ("--pretrain.peak_lr").
enum class KeyKind { kUint, kDouble, kBool, kString, kPath, kStringList, kPathList, kDoubleList };

struct ConfigKey {
  std::string path;
  KeyKind kind;
  std::string help;
};

const std::vector<ConfigKey>& config_keys();

/// Full settings tree for a built-in preset ("desk" or "paper").
nlohmann::json preset_config(std::string_view name);

/// Overlays `layer` on `base`. Unknown keys and wrongly typed values throw
/// ConfigError; relative paths in `layer` are resolved against `base_dir`.
void overlay_config(nlohmann::json& base, const nlohmann::json& layer, const std::filesystem::path& base_dir);

/// Independent seed for one subsystem, derived from the root seed.
std::uint64_t derive_seed(std::uint64_t root, std::string_view subsystem);

/// Typed views of a resolved settings tree.
EncoderConfig encoder_config_from(const nlohmann::json& cfg);
StageConfig stage_config_from(const nlohmann::json& cfg, Stage stage);
ToyCorpusConfig toy_config_from(const nlohmann::json& cfg);

/// Runs `emlab <args...>` and returns the process exit code: 0 success,
/// 1 usage or config error, 2 data validation error, 3 numeric failure.
/// Failures print one line to `err`: "emlab: error=<tag> exit=<code> <message>".
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace emlab
