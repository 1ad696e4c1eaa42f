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

#ifndef COVLM_CHECKPOINT_HPP_
#define COVLM_CHECKPOINT_HPP_

#include <filesystem>

#include <nlohmann/json.hpp>

#include "covlm/model.hpp"

namespace covlm {

// Checkpoint file:
//   "CVLMCKPT" | u64 LE header length | JSON header | binary64 LE blocks
// Blocks, column-major: a, w1, b1, gamma, beta, running_mean, running_var,
// w2, b2, then the Adam first moments and second moments of
// a, w1, b1, gamma, beta, w2, b2.
struct Checkpoint {
  Model model;
  OptimizerState optimizer;
  nlohmann::json header;
};

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const OptimizerState& optimizer, const nlohmann::json& hyperparameters);

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace covlm

#endif  // COVLM_CHECKPOINT_HPP_
