/**
 * Copyright 2026 The signreg Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Experiment configs and the train / transform / eval / repro commands.
//
// Configs are INI files:
//
//   [run]      output_dir, threads
//   [dataset]  kind (blobs | cifar10), path, split_seed, ...
//   [model]    arch, init_seed, hidden, drop_prob, uncertainty_head
//   [strategy] name, mixup_alpha, sign_k, sign_step_scale, ...
//   [source]   model and schedule of the SIGN source network
//   [train]    epochs, batch_size, optimizer, lr, ...
//   [eval]     corruptions, repeats, ood_path, ood_class_map, projection, ...
//
// Unknown sections or keys are rejected.

#ifndef SIGNREG_CLI_HPP_
#define SIGNREG_CLI_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "signreg/augment.hpp"
#include "signreg/datasets.hpp"
#include "signreg/nn.hpp"
#include "signreg/sign.hpp"
#include "signreg/training.hpp"

namespace signreg::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitRuntime = 2;

inline constexpr const char* kThreadsEnv = "SIGNREG_THREADS";

// A user-facing configuration problem; `key` is "section.name" when known.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& message)
      : std::runtime_error(key.empty() ? message : key + ": " + message), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

struct DatasetConfig {
  std::string kind = "blobs";  // blobs | cifar10
  std::filesystem::path path;  // cifar10 only
  std::uint64_t split_seed = 0;
  // blobs
  std::size_t classes = 3;
  std::size_t samples_per_class = 100;
  std::size_t channels = 1;
  std::size_t height = 8;
  std::size_t width = 8;
  double separation = 10.0;
  BlobOptions blobs;
  // cifar10
  CifarOptions cifar;
};

struct SourceConfig {
  std::optional<std::filesystem::path> checkpoint;  // pretrained source
  ModelSpec model;
  TrainConfig train;
};

struct EvalConfig {
  std::vector<CorruptionSpec> corruptions;
  std::size_t repeats = 5;
  std::optional<std::filesystem::path> ood_path;
  std::map<std::string, std::size_t> ood_class_map;
  bool projection = false;
  std::string projection_tap = kPreLogitsTap;
  std::size_t mc_samples = 20;
  std::uint64_t seed = 0;
};

struct ExperimentConfig {
  std::filesystem::path output_dir = "run";
  std::size_t threads = 1;
  DatasetConfig dataset;
  ModelSpec model;
  Strategy strategy = Strategy::kNone;
  std::vector<SignConfig> sign;
  std::optional<SourceConfig> source;
  TrainConfig train;
  EvalConfig eval;

  bool uses_sign() const noexcept {
    return strategy == Strategy::kSign || strategy == Strategy::kSignPlusClassical;
  }
};

// Parses and validates; throws ConfigError. SIGNREG_THREADS overrides
// run.threads. Relative paths resolve against the config file's directory.
ExperimentConfig load_config(const std::filesystem::path& path);
ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = ".");

// Fully resolved INI text; parse_config on it reproduces the same config.
std::string to_ini(const ExperimentConfig& cfg);

// Builds the dataset described by the config, still in raw 0-255 units.
DatasetSplit build_dataset(const DatasetConfig& cfg);

int cmd_train(const std::filesystem::path& config_path, std::ostream& out, std::ostream& err);
// `input` is a sample container, or one of train / val / test to take that
// split of the configured dataset.
int cmd_transform(const std::filesystem::path& config_path, const std::filesystem::path& checkpoint,
                  const std::string& input, const std::filesystem::path& out_path, std::ostream& out,
                  std::ostream& err);
int cmd_eval(const std::filesystem::path& config_path, const std::filesystem::path& checkpoint,
             std::ostream& out, std::ostream& err);

struct ReproOptions {
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> cifar_dir;
  std::optional<std::filesystem::path> output_dir;
};

const std::vector<std::string>& repro_recipes();
int cmd_repro(const std::string& recipe, const ReproOptions& options, std::ostream& out, std::ostream& err);

}  // namespace signreg::cli

#endif  // SIGNREG_CLI_HPP_
