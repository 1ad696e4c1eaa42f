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

#include "covlm/synthgen.hpp"

#include <cmath>
#include <string>

#include "covlm/consensus.hpp"
#include "covlm/rng.hpp"

namespace covlm {
namespace {

std::vector<double> gaussian(Rng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  for (auto& x : v) x = rng.normal();
  return v;
}

std::vector<float> normalized(const std::vector<double>& v) {
  double sum = 0.0;
  for (double x : v) sum += x * x;
  const double norm = std::sqrt(sum);
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] / norm);
  return out;
}

std::vector<double> perturbed(const std::vector<float>& base, Rng& rng, double sigma) {
  std::vector<double> v(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) v[i] = double{base[i]} + sigma * rng.normal();
  return v;
}

ClassScoreStats summarize(const std::vector<double>& clip, const std::vector<double>& blip) {
  ClassScoreStats s;
  s.count = clip.size();
  auto mean_std = [](const std::vector<double>& xs, double& mean, double& sd) {
    double sum = 0.0;
    for (double x : xs) sum += x;
    mean = sum / static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    sd = xs.size() > 1 ? std::sqrt(ss / static_cast<double>(xs.size() - 1)) : 0.0;
  };
  mean_std(clip, s.clip_mean, s.clip_std);
  mean_std(blip, s.blip_mean, s.blip_std);
  return s;
}

nlohmann::json class_json(const ClassScoreStats& s) {
  return {{"count", s.count},       {"clip_mean", s.clip_mean}, {"clip_std", s.clip_std},
          {"blip_mean", s.blip_mean}, {"blip_std", s.blip_std}};
}

}  // namespace

void SynthParams::validate() const {
  if (dim < 2) throw ConfigError("synth: dim must be >= 2");
  if (!(sigma_real > 0.0)) throw ConfigError("synth: sigma_real must be > 0");
  if (!(sigma_fake > sigma_real)) throw ConfigError("synth: sigma_fake must exceed sigma_real");
  if (!(sigma_gen > 0.0)) throw ConfigError("synth: sigma_gen must be > 0");
}

std::vector<EmbeddingRecord> generate(const SynthParams& params) {
  params.validate();
  Rng rng = Rng::stream(params.seed, streams::kSynth);
  std::vector<EmbeddingRecord> out;
  out.reserve(params.n_real + params.n_fake);
  const std::size_t total = params.n_real + params.n_fake;
  for (std::size_t i = 0; i < total; ++i) {
    const bool fake = i >= params.n_real;
    EmbeddingRecord r;
    r.sample_id = i;
    r.label = fake ? Label::kFake : Label::kReal;
    r.image_emb = normalized(gaussian(rng, params.dim));
    r.text_emb = normalized(perturbed(r.image_emb, rng, fake ? params.sigma_fake : params.sigma_real));
    r.gen_text_emb = normalized(perturbed(r.image_emb, rng, params.sigma_gen));
    out.push_back(std::move(r));
  }
  return out;
}

DifficultyStats difficulty_stats(std::span<const EmbeddingRecord> records) {
  std::vector<double> clip[2], blip[2];
  for (const auto& r : records) {
    if (r.label == Label::kUnlabeled) continue;
    if (r.gen_text_emb.empty()) {
      throw Error("difficulty_stats: sample " + std::to_string(r.sample_id) +
                  " has no generated-caption embedding");
    }
    const int c = r.label == Label::kFake ? 1 : 0;
    std::vector<double> img(r.image_emb.begin(), r.image_emb.end());
    std::vector<double> txt(r.text_emb.begin(), r.text_emb.end());
    std::vector<double> gen(r.gen_text_emb.begin(), r.gen_text_emb.end());
    clip[c].push_back(clip_score(img, txt));
    blip[c].push_back(blip_score(txt, gen));
  }
  if (clip[0].empty()) throw Error("difficulty_stats: no Real samples");
  if (clip[1].empty()) throw Error("difficulty_stats: no Fake samples");
  DifficultyStats stats;
  stats.real = summarize(clip[0], blip[0]);
  stats.fake = summarize(clip[1], blip[1]);
  std::size_t above = 0;
  for (double s : clip[1]) above += s > stats.real.clip_mean ? 1 : 0;
  stats.overlap = static_cast<double>(above) / static_cast<double>(clip[1].size());
  return stats;
}

nlohmann::json to_json(const DifficultyStats& stats) {
  return {{"real", class_json(stats.real)}, {"fake", class_json(stats.fake)},
          {"overlap", stats.overlap}};
}

}  // namespace covlm
