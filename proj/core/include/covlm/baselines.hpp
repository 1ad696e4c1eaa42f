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

#ifndef COVLM_BASELINES_HPP_
#define COVLM_BASELINES_HPP_

#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "covlm/consensus.hpp"
#include "covlm/trainer.hpp"

namespace covlm {

// Comparison methods re-expressed as confidence-thresholding policies on the
// head's output, sharing the consensus trainer's loop.
enum class PolicyKind { kCovlm, kSupOnly, kFixMatch, kFreeMatchStar, kAdsh };

PolicyKind parse_policy_kind(std::string_view name);
std::string_view to_string(PolicyKind kind);

struct BaselinePolicy {
  PolicyKind kind = PolicyKind::kCovlm;
  double fixed_tau = 0.95;
  double ema_decay = 0.999;
  // Majority : minority acceptance ratio for Adsh. Unset means the class
  // ratio of the labeled split.
  std::optional<double> target_class_ratio;

  void validate() const;
  nlohmann::json to_json() const;
};

// max(y_hat, 1 - y_hat).
double confidence(double y_hat);

// Accept when confidence >= tau; Fake iff y_hat > 0.5; y_hat == 0.5 is
// always ignored.
std::vector<PseudoLabel> fixmatch_select(std::span<const double> y_hat, double tau);

// Exponential moving average of the batch mean confidence.
double freematch_update(double tau, std::span<const double> confidences, double decay);

struct AdshThresholds {
  double real = 0.0;
  double fake = 0.0;
};

// The class predicted more often keeps `majority_tau`. The other class gets
// the largest threshold under which its accepted count reaches
// ceil(majority_accepted / target_ratio) (lower-nearest rank), never above
// majority_tau.
AdshThresholds adsh_thresholds(std::span<const double> real_confidences,
                               std::span<const double> fake_confidences, double target_ratio,
                               double majority_tau);

class FixMatchLabeler : public PseudoLabeler {
 public:
  explicit FixMatchLabeler(double tau) : tau_(tau) {}
  std::string name() const override { return "fixmatch"; }
  std::vector<PseudoLabel> label_batch(const LabelingContext& ctx,
                                       std::span<const std::size_t> labeled_batch,
                                       std::span<const std::size_t> unlabeled_batch) override;
  nlohmann::json epoch_state() const override { return {{"tau", tau_}}; }

 private:
  double tau_;
};

class FreeMatchLabeler : public PseudoLabeler {
 public:
  explicit FreeMatchLabeler(double decay) : decay_(decay) {}
  std::string name() const override { return "freematch_star"; }
  std::vector<PseudoLabel> label_batch(const LabelingContext& ctx,
                                       std::span<const std::size_t> labeled_batch,
                                       std::span<const std::size_t> unlabeled_batch) override;
  nlohmann::json epoch_state() const override { return {{"tau", tau_}}; }
  double tau() const { return tau_; }

 private:
  double decay_;
  double tau_ = 0.5;
};

class AdshLabeler : public PseudoLabeler {
 public:
  AdshLabeler(double majority_tau, std::optional<double> target_ratio)
      : majority_tau_(majority_tau), target_ratio_(target_ratio) {}
  std::string name() const override { return "adsh"; }
  void begin_epoch(const LabelingContext& ctx) override;
  std::vector<PseudoLabel> label_batch(const LabelingContext& ctx,
                                       std::span<const std::size_t> labeled_batch,
                                       std::span<const std::size_t> unlabeled_batch) override;
  nlohmann::json epoch_state() const override;

 private:
  double majority_tau_;
  std::optional<double> target_ratio_;
  AdshThresholds current_{};
  double ratio_used_ = 1.0;
};

std::unique_ptr<PseudoLabeler> make_labeler(const BaselinePolicy& policy,
                                            const TrainConfig& config);

// Trains with the policy's labeler in the shared loop; the report carries the
// policy next to the usual fields.
FitResult run_baseline(const BaselinePolicy& policy, const TrainConfig& config,
                       const TrainingData& data);

}  // namespace covlm

#endif  // COVLM_BASELINES_HPP_
