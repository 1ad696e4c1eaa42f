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

#ifndef COVLM_SYNTHGEN_HPP_
#define COVLM_SYNTHGEN_HPP_

#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "covlm/store.hpp"

namespace covlm {

// Synthetic dual-encoder geometry. Each sample draws an image direction u
// uniformly on the sphere; the caption is u perturbed by Gaussian noise of
// scale sigma_real or sigma_fake, and the generated caption is u perturbed
// with scale sigma_gen. Fakes are therefore noisier views of the same image,
// not unrelated vectors.
struct SynthParams {
  std::size_t n_real = 0;
  std::size_t n_fake = 0;
  std::size_t dim = 64;
  double sigma_real = 0.3;
  double sigma_fake = 1.2;
  double sigma_gen = 0.4;
  std::uint64_t seed = 0;

  // Throws ConfigError when d < 2, sigma_real <= 0, sigma_fake <= sigma_real
  // or sigma_gen <= 0.
  void validate() const;
};

// Reals get sample ids [0, n_real), fakes [n_real, n_real + n_fake).
std::vector<EmbeddingRecord> generate(const SynthParams& params);

struct ClassScoreStats {
  std::size_t count = 0;
  double clip_mean = 0.0;
  double clip_std = 0.0;
  double blip_mean = 0.0;
  double blip_std = 0.0;
};

struct DifficultyStats {
  ClassScoreStats real;
  ClassScoreStats fake;
  // Fraction of fake samples whose clip score exceeds the real-class mean.
  double overlap = 0.0;
};

// Requires ground truth for both classes; records without a label are
// skipped. Standard deviations use the n-1 denominator (0 for n = 1).
DifficultyStats difficulty_stats(std::span<const EmbeddingRecord> records);

nlohmann::json to_json(const DifficultyStats& stats);

}  // namespace covlm

#endif  // COVLM_SYNTHGEN_HPP_
