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

#include "covlm/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

namespace covlm {
namespace {

Vector predict_positions(const LabelingContext& ctx, std::span<const std::size_t> positions) {
  const auto& table = *ctx.data.table;
  return predict_batch(ctx.model, gather_columns(table.images, positions),
                       gather_columns(table.texts, positions));
}

}  // namespace

PolicyKind parse_policy_kind(std::string_view name) {
  if (name == "covlm") return PolicyKind::kCovlm;
  if (name == "sup_only") return PolicyKind::kSupOnly;
  if (name == "fixmatch") return PolicyKind::kFixMatch;
  if (name == "freematch_star") return PolicyKind::kFreeMatchStar;
  if (name == "adsh") return PolicyKind::kAdsh;
  throw ConfigError("policy kind must be one of covlm, sup_only, fixmatch, freematch_star, adsh; "
                    "got \"" + std::string(name) + "\"");
}

std::string_view to_string(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::kCovlm:
      return "covlm";
    case PolicyKind::kSupOnly:
      return "sup_only";
    case PolicyKind::kFixMatch:
      return "fixmatch";
    case PolicyKind::kFreeMatchStar:
      return "freematch_star";
    case PolicyKind::kAdsh:
      return "adsh";
  }
  return "?";
}

void BaselinePolicy::validate() const {
  if (!(fixed_tau > 0.5 && fixed_tau < 1.0)) throw ConfigError("policy: fixed_tau must lie in (0.5, 1)");
  if (!(ema_decay > 0.0 && ema_decay < 1.0)) throw ConfigError("policy: ema_decay must lie in (0, 1)");
  if (target_class_ratio && !(*target_class_ratio > 0.0)) {
    throw ConfigError("policy: target_class_ratio must be > 0");
  }
}

nlohmann::json BaselinePolicy::to_json() const {
  return {{"kind", to_string(kind)},
          {"fixed_tau", fixed_tau},
          {"ema_decay", ema_decay},
          {"target_class_ratio",
           target_class_ratio ? nlohmann::json(*target_class_ratio) : nlohmann::json(nullptr)}};
}

double confidence(double y_hat) { return std::max(y_hat, 1.0 - y_hat); }

std::vector<PseudoLabel> fixmatch_select(std::span<const double> y_hat, double tau) {
  std::vector<PseudoLabel> out(y_hat.size(), PseudoLabel::kIgnore);
  for (std::size_t i = 0; i < y_hat.size(); ++i) {
    if (y_hat[i] == 0.5 || confidence(y_hat[i]) < tau) continue;
    out[i] = y_hat[i] > 0.5 ? PseudoLabel::kFake : PseudoLabel::kReal;
  }
  return out;
}

double freematch_update(double tau, std::span<const double> confidences, double decay) {
  if (confidences.empty()) throw Error("freematch_update: empty batch");
  double sum = 0.0;
  for (double c : confidences) sum += c;
  return decay * tau + (1.0 - decay) * (sum / static_cast<double>(confidences.size()));
}

AdshThresholds adsh_thresholds(std::span<const double> real_confidences,
                               std::span<const double> fake_confidences, double target_ratio,
                               double majority_tau) {
  if (real_confidences.empty()) throw Error("adsh_thresholds: no Real-predicted samples");
  if (fake_confidences.empty()) throw Error("adsh_thresholds: no Fake-predicted samples");
  if (!(target_ratio > 0.0)) throw Error("adsh_thresholds: target ratio must be > 0");

  const bool real_major = real_confidences.size() >= fake_confidences.size();
  const auto major = real_major ? real_confidences : fake_confidences;
  std::vector<double> minor(real_major ? fake_confidences.begin() : real_confidences.begin(),
                            real_major ? fake_confidences.end() : real_confidences.end());

  const auto major_accepted = static_cast<double>(
      std::count_if(major.begin(), major.end(), [&](double c) { return c >= majority_tau; }));
  const auto wanted = static_cast<std::size_t>(std::ceil(major_accepted / target_ratio));

  double minor_tau = majority_tau;
  if (wanted > 0) {
    std::sort(minor.begin(), minor.end(), std::greater<>());
    const std::size_t rank = std::min(wanted, minor.size());
    minor_tau = std::min(majority_tau, minor[rank - 1]);
  }
  return real_major ? AdshThresholds{majority_tau, minor_tau}
                    : AdshThresholds{minor_tau, majority_tau};
}

std::vector<PseudoLabel> FixMatchLabeler::label_batch(const LabelingContext& ctx,
                                                      std::span<const std::size_t>,
                                                      std::span<const std::size_t> unlabeled_batch) {
  const Vector y = predict_positions(ctx, unlabeled_batch);
  return fixmatch_select(std::span<const double>(y.data(), unlabeled_batch.size()), tau_);
}

std::vector<PseudoLabel> FreeMatchLabeler::label_batch(
    const LabelingContext& ctx, std::span<const std::size_t>,
    std::span<const std::size_t> unlabeled_batch) {
  const Vector y = predict_positions(ctx, unlabeled_batch);
  std::vector<double> conf(unlabeled_batch.size());
  for (std::size_t i = 0; i < conf.size(); ++i) conf[i] = confidence(y(static_cast<Eigen::Index>(i)));
  tau_ = freematch_update(tau_, conf, decay_);
  return fixmatch_select(std::span<const double>(y.data(), unlabeled_batch.size()), tau_);
}

void AdshLabeler::begin_epoch(const LabelingContext& ctx) {
  const auto& table = *ctx.data.table;
  if (target_ratio_) {
    ratio_used_ = *target_ratio_;
  } else {
    std::size_t real = 0;
    std::size_t fake = 0;
    for (auto p : ctx.data.labeled) ++(table.labels[p] == Label::kFake ? fake : real);
    ratio_used_ = static_cast<double>(std::max(real, fake)) /
                  static_cast<double>(std::max<std::size_t>(1, std::min(real, fake)));
  }
  current_ = AdshThresholds{majority_tau_, majority_tau_};
  if (ctx.data.unlabeled.empty()) return;

  const Vector y = predict_positions(ctx, ctx.data.unlabeled);
  std::vector<double> real_conf;
  std::vector<double> fake_conf;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (y(i) == 0.5) continue;
    (y(i) > 0.5 ? fake_conf : real_conf).push_back(confidence(y(i)));
  }
  if (!real_conf.empty() && !fake_conf.empty()) {
    current_ = adsh_thresholds(real_conf, fake_conf, ratio_used_, majority_tau_);
  }
}

std::vector<PseudoLabel> AdshLabeler::label_batch(const LabelingContext& ctx,
                                                  std::span<const std::size_t>,
                                                  std::span<const std::size_t> unlabeled_batch) {
  const Vector y = predict_positions(ctx, unlabeled_batch);
  std::vector<PseudoLabel> out(unlabeled_batch.size(), PseudoLabel::kIgnore);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double p = y(static_cast<Eigen::Index>(i));
    if (p == 0.5) continue;
    const bool fake = p > 0.5;
    if (confidence(p) >= (fake ? current_.fake : current_.real)) {
      out[i] = fake ? PseudoLabel::kFake : PseudoLabel::kReal;
    }
  }
  return out;
}

nlohmann::json AdshLabeler::epoch_state() const {
  return {{"tau_real", current_.real}, {"tau_fake", current_.fake}, {"target_ratio", ratio_used_}};
}

std::unique_ptr<PseudoLabeler> make_labeler(const BaselinePolicy& policy,
                                            const TrainConfig& config) {
  policy.validate();
  switch (policy.kind) {
    case PolicyKind::kCovlm:
      return std::make_unique<ConsensusLabeler>(config.threshold_refresh, config.blip_score_mode);
    case PolicyKind::kSupOnly:
      return std::make_unique<SupervisedOnlyLabeler>();
    case PolicyKind::kFixMatch:
      return std::make_unique<FixMatchLabeler>(policy.fixed_tau);
    case PolicyKind::kFreeMatchStar:
      return std::make_unique<FreeMatchLabeler>(policy.ema_decay);
    case PolicyKind::kAdsh:
      return std::make_unique<AdshLabeler>(policy.fixed_tau, policy.target_class_ratio);
  }
  throw Error("make_labeler: unknown policy");
}

FitResult run_baseline(const BaselinePolicy& policy, const TrainConfig& config,
                       const TrainingData& data) {
  auto labeler = make_labeler(policy, config);
  Trainer trainer(config, data, *labeler);
  FitResult result = trainer.fit();
  result.report["policy"] = policy.to_json();
  return result;
}

}  // namespace covlm
