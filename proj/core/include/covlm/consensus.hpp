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

#ifndef COVLM_CONSENSUS_HPP_
#define COVLM_CONSENSUS_HPP_

#include <span>
#include <string_view>

#include <nlohmann/json.hpp>

#include "covlm/store.hpp"

namespace covlm {

// Agreement between the two vision-language views of one sample.
//   clip: <image, caption>             (dual encoder)
//   blip: <caption, generated caption> (captioner routed through the encoder)
struct ConsensusScores {
  double clip = 0.0;
  double blip = 0.0;
};

// Which vectors the captioner score compares. kTextGen is the default; the
// kImageGen variant compares the image embedding with the generated caption.
enum class BlipScoreMode { kTextGen, kImageGen };

BlipScoreMode parse_blip_score_mode(std::string_view name);
std::string_view to_string(BlipScoreMode mode);

// Per-class, per-score decision boundaries.
struct ThresholdSet {
  double clip_real = 0.0;
  double clip_fake = 0.0;
  double blip_real = 0.0;
  double blip_fake = 0.0;

  // Real-class mean not above fake-class mean for either score. Legal but
  // makes the pseudo-label branches overlap.
  bool degenerate() const { return clip_real <= clip_fake || blip_real <= blip_fake; }

  bool operator==(const ThresholdSet&) const = default;
};

nlohmann::json to_json(const ThresholdSet& t);

enum class PseudoLabel { kReal, kFake, kIgnore };

std::string_view to_string(PseudoLabel label);

// Inner products. Throw Error on dimension mismatch or non-finite input.
double clip_score(std::span<const double> image_emb, std::span<const double> text_emb);
double blip_score(std::span<const double> text_emb, std::span<const double> gen_text_emb);

struct ScoredSample {
  ConsensusScores scores;
  Label label = Label::kReal;
};

// Class means of both scores over the labeled samples, accumulated in input
// order. Throws Error when a class is absent or a sample is unlabeled.
ThresholdSet estimate_thresholds(std::span<const ScoredSample> labeled);

// Fake when both scores fall strictly below the fake boundaries, Real when
// both lie strictly above the real boundaries, Ignore otherwise. The Fake
// test runs first, which only matters for degenerate threshold sets.
PseudoLabel assign_pseudo_label(const ConsensusScores& scores, const ThresholdSet& thresholds);

}  // namespace covlm

#endif  // COVLM_CONSENSUS_HPP_
