// Copyright 2026 The CoVLM Engine Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef COVLM_TOOLS_EXPERIMENT_HPP_
#define COVLM_TOOLS_EXPERIMENT_HPP_

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "covlm/baselines.hpp"
#include "covlm/store.hpp"
#include "covlm/synthgen.hpp"
#include "covlm/trainer.hpp"

namespace covlm::cli {

struct DataPaths {
  std::filesystem::path store;
  std::filesystem::path manifest;
};

// A parsed and schema-checked experiment description. Unknown keys anywhere
// are rejected with ConfigError.
struct ExperimentConfig {
  nlohmann::json raw;
  std::uint64_t seed = 0;
  std::optional<SynthParams> synth;
  std::optional<ManifestOptions> split;
  std::optional<DataPaths> data;
  std::optional<ClassRatio> imbalance;
  std::optional<double> unlabeled_multiplier;
  TrainConfig train;
  std::optional<BaselinePolicy> policy;
  std::vector<double> sweep_multipliers{0.0, 1.0, 2.0, 4.0, 10.0};
  std::vector<std::filesystem::path> inputs;
};

// Relative paths resolve against `base_dir` (the config file's directory).
ExperimentConfig parse_experiment(const nlohmann::json& doc, const std::filesystem::path& base_dir,
                                  std::optional<std::uint64_t> seed_override);

ExperimentConfig load_experiment(const std::filesystem::path& path,
                                 std::optional<std::uint64_t> seed_override);

// Records, manifest and column table for one run. Heap-held because `data`
// points into `table`.
struct PreparedData {
  std::vector<EmbeddingRecord> records;
  SplitManifest manifest;
  EmbeddingTable table;
  TrainingData data;
};

// Loads or generates the records, builds or reads the manifest, then applies
// the imbalance and unlabeled-multiplier options (in that order).
// `multiplier` overrides the config's unlabeled_multiplier when set.
std::unique_ptr<const PreparedData> prepare_data(const ExperimentConfig& config,
                                                 std::optional<double> multiplier);

// Generation + manifest only, without resampling.
std::pair<std::vector<EmbeddingRecord>, SplitManifest> materialize(const ExperimentConfig& config);

}  // namespace covlm::cli

#endif  // COVLM_TOOLS_EXPERIMENT_HPP_
