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

#ifndef COVLM_TRAINER_HPP_
#define COVLM_TRAINER_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "covlm/consensus.hpp"
#include "covlm/model.hpp"
#include "covlm/rng.hpp"
#include "covlm/store.hpp"

namespace covlm {

enum class ThresholdRefresh { kPerEpoch, kPerBatch };

ThresholdRefresh parse_threshold_refresh(std::string_view name);
std::string_view to_string(ThresholdRefresh refresh);

struct TrainConfig {
  int epochs = 40;
  int batch_size = 64;
  double lr0 = 5e-4;
  double lr_min = 0.0;
  int constant_lr_epochs = 20;
  int warmup_epochs = 5;
  // 0 means one pass over the unlabeled pool (or the labeled split when the
  // pool is empty).
  int steps_per_epoch = 0;
  double lambda = 1.0;
  // Multiplies the learning rate of the image adapter only.
  double adapter_lr_scale = 1.0;
  ThresholdRefresh threshold_refresh = ThresholdRefresh::kPerEpoch;
  BlipScoreMode blip_score_mode = BlipScoreMode::kTextGen;
  std::uint64_t seed = 0;
  std::size_t hidden = 0;  // 0 = same as the embedding dimension
  double dropout = 0.5;
  double bn_momentum = 0.1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int checkpoint_every = 0;  // epochs; 0 disables
  std::filesystem::path checkpoint_dir;

  // Throws ConfigError.
  void validate() const;
  nlohmann::json to_json() const;
  ScheduleConfig schedule() const;
};

// Store records converted to double precision, one column per sample.
struct EmbeddingTable {
  Matrix images;
  Matrix texts;
  Matrix gens;  // empty when the store carries no generated captions
  std::vector<std::uint64_t> ids;
  std::vector<Label> labels;
  std::unordered_map<std::uint64_t, std::size_t> index;

  static EmbeddingTable from_records(std::span<const EmbeddingRecord> records);
  std::size_t dim() const { return static_cast<std::size_t>(images.rows()); }
  std::size_t size() const { return ids.size(); }
  bool has_generated_captions() const { return gens.size() > 0; }
  std::size_t position(std::uint64_t id) const;
};

// Column positions of each split inside one table.
struct TrainingData {
  const EmbeddingTable* table = nullptr;
  std::vector<std::size_t> labeled;
  std::vector<std::size_t> unlabeled;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;

  static TrainingData from_manifest(const EmbeddingTable& table, const SplitManifest& manifest);
};

Matrix gather_columns(const Matrix& source, std::span<const std::size_t> positions);

// Consensus scores of the given samples under the current adapter.
std::vector<ConsensusScores> consensus_scores(const Model& model, const EmbeddingTable& table,
                                              std::span<const std::size_t> positions,
                                              BlipScoreMode mode);

ThresholdSet estimate_thresholds_for(const Model& model, const EmbeddingTable& table,
                                     std::span<const std::size_t> labeled, BlipScoreMode mode);

// ---------------------------------------------------------------------------
// Metrics

struct EvalMetrics {
  std::size_t count = 0;
  double accuracy = 0.0;
  double balanced_accuracy = 0.0;
  // Rows: truth, columns: prediction.
  std::size_t real_as_real = 0;
  std::size_t real_as_fake = 0;
  std::size_t fake_as_real = 0;
  std::size_t fake_as_fake = 0;
};

nlohmann::json to_json(const EvalMetrics& m);

// Fake iff y_hat > 0.5. Balanced accuracy is the mean recall over the
// classes present. Throws Error on an empty split.
EvalMetrics evaluate_predictions(std::span<const double> y_hat, std::span<const Label> truth);
EvalMetrics evaluate(const Model& model, const EmbeddingTable& table,
                     std::span<const std::size_t> positions);

struct PseudoLabelQuality {
  std::size_t total = 0;
  std::size_t accepted = 0;
  double coverage = 0.0;
  std::size_t accepted_real = 0;
  std::size_t accepted_fake = 0;
  std::optional<double> precision_real;
  std::optional<double> precision_fake;
  std::optional<double> recall_real;
  std::optional<double> recall_fake;
};

nlohmann::json to_json(const PseudoLabelQuality& q);

// Running tally; samples whose truth is unknown count towards coverage only.
class PseudoLabelTally {
 public:
  void add(PseudoLabel assigned, Label truth);
  PseudoLabelQuality result() const;

 private:
  std::size_t total_ = 0;
  std::size_t accepted_[2] = {0, 0};
  std::size_t judged_[2] = {0, 0};  // accepted with known truth
  std::size_t correct_[2] = {0, 0};
  std::size_t truth_[2] = {0, 0};
};

PseudoLabelQuality pseudo_label_quality(std::span<const PseudoLabel> assigned,
                                        std::span<const Label> truth);

struct EpochMetrics {
  int epoch = 0;
  double lr = 0.0;
  std::size_t steps = 0;
  std::string data_order;  // digest of the batch id sequence
  LossBreakdown losses;    // means over the epoch's steps
  std::optional<ThresholdSet> thresholds;
  nlohmann::json policy_state;
  PseudoLabelQuality pseudo_labels;
  std::optional<EvalMetrics> val;
};

nlohmann::json to_json(const EpochMetrics& m);

// ---------------------------------------------------------------------------
// Pseudo-labeling policies

struct LabelingContext {
  const Model& model;
  const TrainingData& data;
  const TrainConfig& config;
  int epoch;
};

class PseudoLabeler {
 public:
  virtual ~PseudoLabeler() = default;
  virtual std::string name() const = 0;
  // When false the unlabeled batches are still drawn (same data order) but
  // never labeled or forwarded.
  virtual bool uses_unlabeled() const { return true; }
  virtual void begin_epoch(const LabelingContext& /*ctx*/) {}
  virtual std::vector<PseudoLabel> label_batch(const LabelingContext& ctx,
                                               std::span<const std::size_t> labeled_batch,
                                               std::span<const std::size_t> unlabeled_batch) = 0;
  virtual std::optional<ThresholdSet> thresholds() const { return std::nullopt; }
  virtual nlohmann::json epoch_state() const { return nullptr; }
};

// Consensus pseudo-labeling: thresholds from labeled class means, labels by
// the strict two-score rule.
class ConsensusLabeler : public PseudoLabeler {
 public:
  ConsensusLabeler(ThresholdRefresh refresh, BlipScoreMode mode);

  std::string name() const override { return "covlm"; }
  void begin_epoch(const LabelingContext& ctx) override;
  std::vector<PseudoLabel> label_batch(const LabelingContext& ctx,
                                       std::span<const std::size_t> labeled_batch,
                                       std::span<const std::size_t> unlabeled_batch) override;
  std::optional<ThresholdSet> thresholds() const override;
  nlohmann::json epoch_state() const override;

 private:
  ThresholdRefresh refresh_;
  BlipScoreMode mode_;
  ThresholdSet epoch_thresholds_;
  ThresholdSet batch_sum_;
  std::size_t batch_estimates_ = 0;
  std::size_t fallbacks_ = 0;
};

// Labeled-only training: the unlabeled term is always zero.
class SupervisedOnlyLabeler : public PseudoLabeler {
 public:
  std::string name() const override { return "sup_only"; }
  bool uses_unlabeled() const override { return false; }
  std::vector<PseudoLabel> label_batch(const LabelingContext&, std::span<const std::size_t>,
                                       std::span<const std::size_t> unlabeled_batch) override {
    return std::vector<PseudoLabel>(unlabeled_batch.size(), PseudoLabel::kIgnore);
  }
};

// ---------------------------------------------------------------------------
// Training loop

// Fixed-size batches from successive seeded permutations; a permutation's
// remainder smaller than one batch is dropped.
class BatchCycler {
 public:
  BatchCycler(std::vector<std::size_t> items, std::size_t batch_size, Rng rng);
  std::span<const std::size_t> next();
  std::size_t batch_size() const { return batch_size_; }
  std::size_t batches_per_pass() const { return items_.size() / batch_size_; }

 private:
  std::vector<std::size_t> items_;
  std::size_t batch_size_;
  std::size_t cursor_ = 0;
  Rng rng_;
};

struct StepResult {
  LossBreakdown loss;
  std::size_t accepted = 0;
};

struct FitResult {
  Model model;
  OptimizerState optimizer;
  std::vector<EpochMetrics> history;
  EvalMetrics test;
  nlohmann::json report;
};

class Trainer {
 public:
  Trainer(TrainConfig config, const TrainingData& data, PseudoLabeler& labeler);

  const Model& model() const { return model_; }
  Model& model() { return model_; }
  const OptimizerState& optimizer() const { return optimizer_; }
  const TrainConfig& config() const { return config_; }

  // Labeled-only epochs on L_sup + lambda * L_cc at the base learning rate.
  // Returns mean losses per warm-up epoch.
  std::vector<LossBreakdown> warmup(int epochs);

  // Optimizer steps in one main epoch.
  std::size_t steps_per_epoch() const;

  // One main epoch (0-based index into the schedule).
  EpochMetrics train_epoch(int epoch);

  // One optimizer step on a labeled batch plus accepted unlabeled samples.
  StepResult step(std::span<const std::size_t> labeled_batch,
                  std::span<const std::size_t> unlabeled_batch,
                  std::span<const PseudoLabel> pseudo_labels, double lr);

  // Warm-up, all epochs, final test evaluation and the run report.
  FitResult fit();

 private:
  TrainConfig config_;
  const TrainingData& data_;
  PseudoLabeler& labeler_;
  Model model_;
  OptimizerState optimizer_;
  BatchCycler labeled_;
  std::optional<BatchCycler> unlabeled_;
  Rng dropout_rng_;
};

}  // namespace covlm

#endif  // COVLM_TRAINER_HPP_
