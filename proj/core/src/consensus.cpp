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

#include "covlm/consensus.hpp"

#include <cmath>
#include <string>

namespace covlm {
namespace {

double inner_product(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size()) {
    throw Error(std::string(what) + ": dimension mismatch (" + std::to_string(a.size()) + " vs " +
                std::to_string(b.size()) + ")");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i]) || !std::isfinite(b[i])) {
      throw Error(std::string(what) + ": non-finite input at index " + std::to_string(i));
    }
    sum += a[i] * b[i];
  }
  return sum;
}

}  // namespace

BlipScoreMode parse_blip_score_mode(std::string_view name) {
  if (name == "text_gen") return BlipScoreMode::kTextGen;
  if (name == "image_gen") return BlipScoreMode::kImageGen;
  throw ConfigError("blip_score_mode must be \"text_gen\" or \"image_gen\", got \"" +
                    std::string(name) + "\"");
}

std::string_view to_string(BlipScoreMode mode) {
  return mode == BlipScoreMode::kTextGen ? "text_gen" : "image_gen";
}

std::string_view to_string(PseudoLabel label) {
  switch (label) {
    case PseudoLabel::kReal:
      return "Real";
    case PseudoLabel::kFake:
      return "Fake";
    case PseudoLabel::kIgnore:
      return "Ignore";
  }
  return "?";
}

nlohmann::json to_json(const ThresholdSet& t) {
  return {{"clip_real", t.clip_real},
          {"clip_fake", t.clip_fake},
          {"blip_real", t.blip_real},
          {"blip_fake", t.blip_fake},
          {"degenerate", t.degenerate()}};
}

double clip_score(std::span<const double> image_emb, std::span<const double> text_emb) {
  return inner_product(image_emb, text_emb, "clip_score");
}

double blip_score(std::span<const double> text_emb, std::span<const double> gen_text_emb) {
  return inner_product(text_emb, gen_text_emb, "blip_score");
}

ThresholdSet estimate_thresholds(std::span<const ScoredSample> labeled) {
  double clip_sum[2] = {0.0, 0.0};
  double blip_sum[2] = {0.0, 0.0};
  std::size_t count[2] = {0, 0};
  for (const auto& s : labeled) {
    if (s.label == Label::kUnlabeled) {
      throw Error("estimate_thresholds: unlabeled sample in the labeled set");
    }
    const int c = s.label == Label::kFake ? 1 : 0;
    clip_sum[c] += s.scores.clip;
    blip_sum[c] += s.scores.blip;
    ++count[c];
  }
  if (count[0] == 0) throw Error("estimate_thresholds: no Real samples, thresholds undefined");
  if (count[1] == 0) throw Error("estimate_thresholds: no Fake samples, thresholds undefined");
  ThresholdSet t;
  t.clip_real = clip_sum[0] / static_cast<double>(count[0]);
  t.blip_real = blip_sum[0] / static_cast<double>(count[0]);
  t.clip_fake = clip_sum[1] / static_cast<double>(count[1]);
  t.blip_fake = blip_sum[1] / static_cast<double>(count[1]);
  return t;
}

PseudoLabel assign_pseudo_label(const ConsensusScores& scores, const ThresholdSet& thresholds) {
  if (scores.clip < thresholds.clip_fake && scores.blip < thresholds.blip_fake) {
    return PseudoLabel::kFake;
  }
  if (scores.clip > thresholds.clip_real && scores.blip > thresholds.blip_real) {
    return PseudoLabel::kReal;
  }
  return PseudoLabel::kIgnore;
}

}  // namespace covlm
