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

#include <vector>

#include <benchmark/benchmark.h>

#include "covlm/consensus.hpp"
#include "covlm/model.hpp"
#include "covlm/rng.hpp"
#include "covlm/store.hpp"
#include "covlm/synthgen.hpp"
#include "covlm/trainer.hpp"

namespace {

using namespace covlm;

void BM_AssignPseudoLabels(benchmark::State& state) {
  Rng rng(1);
  std::vector<ConsensusScores> scores(static_cast<std::size_t>(state.range(0)));
  for (auto& s : scores) s = {2 * rng.uniform() - 1, 2 * rng.uniform() - 1};
  const ThresholdSet t{0.6, 0.2, 0.55, 0.25};
  std::vector<PseudoLabel> out(scores.size());
  for (auto _ : state) {
    for (std::size_t i = 0; i < scores.size(); ++i) out[i] = assign_pseudo_label(scores[i], t);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_AssignPseudoLabels)->Arg(64)->Arg(8192);

void BM_EstimateThresholds(benchmark::State& state) {
  Rng rng(2);
  std::vector<ScoredSample> labeled(static_cast<std::size_t>(state.range(0)));
  for (std::size_t i = 0; i < labeled.size(); ++i) {
    labeled[i] = {{rng.uniform(), rng.uniform()}, i % 2 ? Label::kFake : Label::kReal};
  }
  for (auto _ : state) benchmark::DoNotOptimize(estimate_thresholds(labeled));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EstimateThresholds)->Arg(200)->Arg(4000);

// Forward, backward and Adam on one labeled + pseudo-labeled batch.
void BM_TrainStep(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  const Eigen::Index n = 128;
  Rng rng(3), drop(4);
  Model m = init_model({d, d, 0.5, 0.1, 1e-5}, 5);
  auto opt = OptimizerState::for_model(m);
  TrainingBatch b;
  b.images = Matrix::NullaryExpr(d, n, [&] { return rng.normal(); }).colwise().normalized();
  b.texts = Matrix::NullaryExpr(d, n, [&] { return rng.normal(); }).colwise().normalized();
  for (Eigen::Index j = 0; j < n; ++j) b.targets.push_back(static_cast<double>(j % 2));
  b.n_labeled = 64;
  for (auto _ : state) {
    const auto rec = forward_objective(m, b, 1.0, Mode::kTrain, &drop);
    const auto g = backward(m, b, rec);
    update_running_stats(m.head, rec.head);
    adam_step(m, g, opt, 1e-5);
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_TrainStep)->Arg(64)->Arg(512);

void BM_StoreRoundTrip(benchmark::State& state) {
  SynthParams p;
  p.n_real = p.n_fake = static_cast<std::size_t>(state.range(0)) / 2;
  p.dim = 64;
  p.seed = 6;
  const auto records = generate(p);
  std::size_t bytes = 0;
  for (auto _ : state) {
    const auto image = serialize_store(records, 64);
    bytes = image.size();
    benchmark::DoNotOptimize(parse_store(image));
  }
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(bytes));
}
BENCHMARK(BM_StoreRoundTrip)->Arg(1000)->Arg(10000);

void BM_ConsensusScores(benchmark::State& state) {
  SynthParams p;
  p.n_real = p.n_fake = 4000;
  p.dim = 64;
  const auto records = generate(p);
  const auto table = EmbeddingTable::from_records(records);
  std::vector<std::size_t> all(table.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const Model m = init_model({64, 64, 0.5, 0.1, 1e-5}, 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(consensus_scores(m, table, all, BlipScoreMode::kTextGen));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(all.size()));
}
BENCHMARK(BM_ConsensusScores);

}  // namespace
BENCHMARK_MAIN();
