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

#include <gtest/gtest.h>

namespace covlm {
namespace {

double dot(const std::vector<float>& a, const std::vector<float>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += double{a[i]} * double{b[i]};
  return s;
}

double mean_clip(const std::vector<EmbeddingRecord>& records, Label label) {
  double s = 0.0;
  int n = 0;
  for (const auto& r : records) {
    if (r.label != label) continue;
    s += dot(r.image_emb, r.text_emb);
    ++n;
  }
  return s / n;
}

TEST(Generate, EmptyParamsGiveEmptyList) {
  EXPECT_TRUE(generate(SynthParams{}).empty());
}

TEST(Generate, SameSeedIsBitIdentical) {
  SynthParams p;
  p.n_real = 20;
  p.n_fake = 30;
  p.dim = 8;
  p.seed = 77;
  EXPECT_EQ(generate(p), generate(p));
  auto q = p;
  q.seed = 78;
  EXPECT_NE(generate(p), generate(q));
}

TEST(Generate, LabelsIdsAndUnitNorms) {
  SynthParams p;
  p.n_real = 50;
  p.n_fake = 40;
  p.dim = 16;
  p.seed = 1;
  const auto records = generate(p);
  ASSERT_EQ(records.size(), 90u);
  for (std::size_t i = 0; i < records.size(); ++i) {
    EXPECT_EQ(records[i].sample_id, i);
    EXPECT_EQ(records[i].label, i < 50 ? Label::kReal : Label::kFake);
    for (const auto* v : {&records[i].image_emb, &records[i].text_emb, &records[i].gen_text_emb}) {
      ASSERT_EQ(v->size(), 16u);
      EXPECT_NEAR(std::sqrt(dot(*v, *v)), 1.0, 1e-6);
    }
  }
}

TEST(Generate, ReferenceGapBetweenClassMeans) {
  SynthParams p;
  p.n_real = 1000;
  p.n_fake = 1000;
  p.seed = 3;
  const auto records = generate(p);
  EXPECT_GT(mean_clip(records, Label::kReal) - mean_clip(records, Label::kFake), 0.2);
}

TEST(Generate, FakeMeanDecreasesWithSigmaFake) {
  double previous = 2.0;
  for (double sigma : {0.6, 1.2, 2.4}) {
    SynthParams p;
    p.n_real = 10;
    p.n_fake = 1000;
    p.sigma_fake = sigma;
    p.seed = 21;
    const double m = mean_clip(generate(p), Label::kFake);
    EXPECT_LT(m, previous) << sigma;
    previous = m;
  }
}

TEST(Generate, InvalidParamsAreConfigErrors) {
  SynthParams p;
  p.dim = 1;
  EXPECT_THROW(generate(p), ConfigError);
  p = SynthParams{};
  p.sigma_fake = p.sigma_real;
  EXPECT_THROW(generate(p), ConfigError);
  p = SynthParams{};
  p.sigma_gen = 0.0;
  EXPECT_THROW(generate(p), ConfigError);
}

TEST(DifficultyStats, IdenticalRealPairsScoreOne) {
  SynthParams p;
  p.n_real = 30;
  p.n_fake = 30;
  p.dim = 8;
  p.seed = 2;
  auto records = generate(p);
  for (auto& r : records) {
    if (r.label == Label::kReal) r.text_emb = r.image_emb;
  }
  const auto stats = difficulty_stats(records);
  EXPECT_NEAR(stats.real.clip_mean, 1.0, 1e-6);
  EXPECT_NEAR(stats.real.clip_std, 0.0, 1e-6);
  EXPECT_EQ(stats.overlap, 0.0);
}

TEST(DifficultyStats, SingleClassIsAnError) {
  SynthParams p;
  p.n_real = 5;
  p.dim = 4;
  EXPECT_THROW(difficulty_stats(generate(p)), Error);
}

TEST(DifficultyStats, MatchesIndependentRecomputation) {
  SynthParams p;
  p.n_real = 300;
  p.n_fake = 200;
  p.dim = 32;
  p.seed = 5;
  const auto records = generate(p);
  const auto stats = difficulty_stats(records);

  std::vector<double> clip[2], blip[2];
  for (const auto& r : records) {
    const int c = r.label == Label::kFake;
    clip[c].push_back(dot(r.image_emb, r.text_emb));
    blip[c].push_back(dot(r.text_emb, r.gen_text_emb));
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  auto sd = [&](const std::vector<double>& v) {
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
  };
  EXPECT_EQ(stats.real.count, 300u);
  EXPECT_EQ(stats.fake.count, 200u);
  EXPECT_NEAR(stats.real.clip_mean, mean(clip[0]), 1e-12);
  EXPECT_NEAR(stats.fake.clip_mean, mean(clip[1]), 1e-12);
  EXPECT_NEAR(stats.real.blip_mean, mean(blip[0]), 1e-12);
  EXPECT_NEAR(stats.fake.blip_mean, mean(blip[1]), 1e-12);
  EXPECT_NEAR(stats.real.clip_std, sd(clip[0]), 1e-12);
  EXPECT_NEAR(stats.fake.blip_std, sd(blip[1]), 1e-12);
  int above = 0;
  for (double s : clip[1]) above += s > mean(clip[0]);
  EXPECT_DOUBLE_EQ(stats.overlap, above / 200.0);
}

}  // namespace
}  // namespace covlm
