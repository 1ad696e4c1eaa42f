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

#include "covlm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "covlm/checkpoint.hpp"

namespace covlm {
namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

void fnv_mix(std::uint64_t& h, std::uint64_t value) {
  for (int i = 0; i < 8; ++i) {
    h ^= (value >> (8 * i)) & 0xffu;
    h *= kFnvPrime;
  }
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

nlohmann::json to_json(const LossBreakdown& l) {
  return {{"l_sup", l.l_sup},
          {"l_cc", l.l_cc},
          {"l_unsup", l.l_unsup},
          {"lambda", l.lambda},
          {"total", l.total}};
}

std::span<const double> column(const Matrix& m, std::size_t j) {
  return {m.col(static_cast<Eigen::Index>(j)).data(), static_cast<std::size_t>(m.rows())};
}

bool has_both_classes(const EmbeddingTable& table, std::span<const std::size_t> positions) {
  bool real = false;
  bool fake = false;
  for (auto p : positions) {
    real |= table.labels[p] == Label::kReal;
    fake |= table.labels[p] == Label::kFake;
  }
  return real && fake;
}

}  // namespace

ThresholdRefresh parse_threshold_refresh(std::string_view name) {
  if (name == "per_epoch") return ThresholdRefresh::kPerEpoch;
  if (name == "per_batch") return ThresholdRefresh::kPerBatch;
  throw ConfigError("threshold_refresh must be \"per_epoch\" or \"per_batch\", got \"" +
                    std::string(name) + "\"");
}

std::string_view to_string(ThresholdRefresh refresh) {
  return refresh == ThresholdRefresh::kPerEpoch ? "per_epoch" : "per_batch";
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (batch_size < 2) throw ConfigError("train: batch_size must be >= 2");
  if (warmup_epochs < 0 || warmup_epochs >= epochs) {
    throw ConfigError("train: warmup_epochs must satisfy 0 <= warmup_epochs < epochs");
  }
  if (!(lr0 > 0.0) || !std::isfinite(lr0)) throw ConfigError("train: lr0 must be > 0");
  if (!(lr_min >= 0.0) || lr_min > lr0) throw ConfigError("train: lr_min must lie in [0, lr0]");
  if (constant_lr_epochs < 0) throw ConfigError("train: constant_lr_epochs must be >= 0");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("train: lambda must be >= 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("train: dropout must lie in [0, 1)");
  if (!(bn_momentum > 0.0 && bn_momentum <= 1.0)) {
    throw ConfigError("train: bn_momentum must lie in (0, 1]");
  }
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw ConfigError("train: adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("train: adam_eps must be > 0");
  if (!(adapter_lr_scale >= 0.0) || !std::isfinite(adapter_lr_scale)) {
    throw ConfigError("train: adapter_lr_scale must be a finite value >= 0");
  }
  if (steps_per_epoch < 0) throw ConfigError("train: steps_per_epoch must be >= 0");
  if (checkpoint_every < 0) throw ConfigError("train: checkpoint_every must be >= 0");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"lr0", lr0},
          {"lr_min", lr_min},
          {"constant_lr_epochs", constant_lr_epochs},
          {"warmup_epochs", warmup_epochs},
          {"steps_per_epoch", steps_per_epoch},
          {"adapter_lr_scale", adapter_lr_scale},
          {"lambda", lambda},
          {"threshold_refresh", to_string(threshold_refresh)},
          {"blip_score_mode", to_string(blip_score_mode)},
          {"seed", seed},
          {"hidden", hidden},
          {"dropout", dropout},
          {"bn_momentum", bn_momentum},
          {"adam_beta1", adam_beta1},
          {"adam_beta2", adam_beta2},
          {"adam_eps", adam_eps},
          {"checkpoint_every", checkpoint_every}};
}

ScheduleConfig TrainConfig::schedule() const {
  return ScheduleConfig{lr0, lr_min, constant_lr_epochs, epochs};
}

// ---------------------------------------------------------------------------

EmbeddingTable EmbeddingTable::from_records(std::span<const EmbeddingRecord> records) {
  EmbeddingTable t;
  if (records.empty()) return t;
  const auto d = static_cast<Eigen::Index>(records.front().image_emb.size());
  const auto n = static_cast<Eigen::Index>(records.size());
  const bool gens = std::all_of(records.begin(), records.end(),
                                [](const auto& r) { return !r.gen_text_emb.empty(); });
  t.images.resize(d, n);
  t.texts.resize(d, n);
  if (gens) t.gens.resize(d, n);
  t.ids.reserve(records.size());
  t.labels.reserve(records.size());
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto& r = records[static_cast<std::size_t>(j)];
    if (static_cast<Eigen::Index>(r.image_emb.size()) != d ||
        static_cast<Eigen::Index>(r.text_emb.size()) != d ||
        (gens && static_cast<Eigen::Index>(r.gen_text_emb.size()) != d)) {
      throw Error("table: record " + std::to_string(r.sample_id) + " has inconsistent dimension");
    }
    for (Eigen::Index i = 0; i < d; ++i) {
      t.images(i, j) = r.image_emb[static_cast<std::size_t>(i)];
      t.texts(i, j) = r.text_emb[static_cast<std::size_t>(i)];
      if (gens) t.gens(i, j) = r.gen_text_emb[static_cast<std::size_t>(i)];
    }
    t.ids.push_back(r.sample_id);
    t.labels.push_back(r.label);
    if (!t.index.emplace(r.sample_id, static_cast<std::size_t>(j)).second) {
      throw Error("table: duplicate sample_id " + std::to_string(r.sample_id));
    }
  }
  return t;
}

std::size_t EmbeddingTable::position(std::uint64_t id) const {
  auto it = index.find(id);
  if (it == index.end()) throw Error("table: unknown sample_id " + std::to_string(id));
  return it->second;
}

TrainingData TrainingData::from_manifest(const EmbeddingTable& table,
                                         const SplitManifest& manifest) {
  TrainingData data;
  data.table = &table;
  auto map = [&](const std::vector<std::uint64_t>& ids) {
    std::vector<std::size_t> out;
    out.reserve(ids.size());
    for (auto id : ids) out.push_back(table.position(id));
    return out;
  };
  data.labeled = map(manifest.train_labeled);
  data.unlabeled = map(manifest.train_unlabeled);
  data.val = map(manifest.val);
  data.test = map(manifest.test);
  return data;
}

Matrix gather_columns(const Matrix& source, std::span<const std::size_t> positions) {
  Matrix out(source.rows(), static_cast<Eigen::Index>(positions.size()));
  for (std::size_t j = 0; j < positions.size(); ++j) {
    out.col(static_cast<Eigen::Index>(j)) = source.col(static_cast<Eigen::Index>(positions[j]));
  }
  return out;
}

std::vector<ConsensusScores> consensus_scores(const Model& model, const EmbeddingTable& table,
                                              std::span<const std::size_t> positions,
                                              BlipScoreMode mode) {
  if (!table.has_generated_captions()) {
    throw Error("consensus: the store carries no generated-caption embeddings");
  }
  const Matrix adapted = adapt_images(model.adapter, gather_columns(table.images, positions));
  std::vector<ConsensusScores> out(positions.size());
  for (std::size_t j = 0; j < positions.size(); ++j) {
    const auto img = column(adapted, j);
    const auto txt = column(table.texts, positions[j]);
    const auto gen = column(table.gens, positions[j]);
    out[j].clip = clip_score(img, txt);
    out[j].blip = mode == BlipScoreMode::kTextGen ? blip_score(txt, gen) : blip_score(img, gen);
  }
  return out;
}

ThresholdSet estimate_thresholds_for(const Model& model, const EmbeddingTable& table,
                                     std::span<const std::size_t> labeled, BlipScoreMode mode) {
  const auto scores = consensus_scores(model, table, labeled, mode);
  std::vector<ScoredSample> samples(labeled.size());
  for (std::size_t j = 0; j < labeled.size(); ++j) {
    samples[j] = ScoredSample{scores[j], table.labels[labeled[j]]};
  }
  return estimate_thresholds(samples);
}

// ---------------------------------------------------------------------------

nlohmann::json to_json(const EvalMetrics& m) {
  return {{"count", m.count},
          {"accuracy", m.accuracy},
          {"balanced_accuracy", m.balanced_accuracy},
          {"confusion",
           {{"real_as_real", m.real_as_real},
            {"real_as_fake", m.real_as_fake},
            {"fake_as_real", m.fake_as_real},
            {"fake_as_fake", m.fake_as_fake}}}};
}

EvalMetrics evaluate_predictions(std::span<const double> y_hat, std::span<const Label> truth) {
  if (y_hat.empty()) throw Error("evaluate: empty split");
  if (y_hat.size() != truth.size()) throw Error("evaluate: size mismatch");
  EvalMetrics m;
  m.count = y_hat.size();
  for (std::size_t i = 0; i < y_hat.size(); ++i) {
    const bool predicted_fake = y_hat[i] > 0.5;
    switch (truth[i]) {
      case Label::kReal:
        ++(predicted_fake ? m.real_as_fake : m.real_as_real);
        break;
      case Label::kFake:
        ++(predicted_fake ? m.fake_as_fake : m.fake_as_real);
        break;
      case Label::kUnlabeled:
        throw Error("evaluate: split contains an unlabeled sample");
    }
  }
  m.accuracy = static_cast<double>(m.real_as_real + m.fake_as_fake) / static_cast<double>(m.count);
  double recall_sum = 0.0;
  int classes = 0;
  if (const auto n = m.real_as_real + m.real_as_fake; n > 0) {
    recall_sum += static_cast<double>(m.real_as_real) / static_cast<double>(n);
    ++classes;
  }
  if (const auto n = m.fake_as_fake + m.fake_as_real; n > 0) {
    recall_sum += static_cast<double>(m.fake_as_fake) / static_cast<double>(n);
    ++classes;
  }
  m.balanced_accuracy = recall_sum / classes;
  return m;
}

EvalMetrics evaluate(const Model& model, const EmbeddingTable& table,
                     std::span<const std::size_t> positions) {
  if (positions.empty()) throw Error("evaluate: empty split");
  const Vector y_hat = predict_batch(model, gather_columns(table.images, positions),
                                     gather_columns(table.texts, positions));
  std::vector<Label> truth(positions.size());
  for (std::size_t j = 0; j < positions.size(); ++j) truth[j] = table.labels[positions[j]];
  return evaluate_predictions(std::span<const double>(y_hat.data(), positions.size()), truth);
}

nlohmann::json to_json(const PseudoLabelQuality& q) {
  return {{"total", q.total},
          {"accepted", q.accepted},
          {"coverage", q.coverage},
          {"accepted_real", q.accepted_real},
          {"accepted_fake", q.accepted_fake},
          {"precision_real", optional_json(q.precision_real)},
          {"precision_fake", optional_json(q.precision_fake)},
          {"recall_real", optional_json(q.recall_real)},
          {"recall_fake", optional_json(q.recall_fake)}};
}

void PseudoLabelTally::add(PseudoLabel assigned, Label truth) {
  ++total_;
  const int truth_class = truth == Label::kReal ? 0 : truth == Label::kFake ? 1 : -1;
  if (truth_class >= 0) ++truth_[truth_class];
  if (assigned == PseudoLabel::kIgnore) return;
  const int c = assigned == PseudoLabel::kFake ? 1 : 0;
  ++accepted_[c];
  if (truth_class >= 0) ++judged_[c];
  if (truth_class == c) ++correct_[c];
}

PseudoLabelQuality PseudoLabelTally::result() const {
  PseudoLabelQuality q;
  q.total = total_;
  q.accepted_real = accepted_[0];
  q.accepted_fake = accepted_[1];
  q.accepted = accepted_[0] + accepted_[1];
  q.coverage = total_ > 0 ? static_cast<double>(q.accepted) / static_cast<double>(total_) : 0.0;
  auto ratio = [](std::size_t num, std::size_t den) -> std::optional<double> {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
  };
  q.precision_real = ratio(correct_[0], judged_[0]);
  q.precision_fake = ratio(correct_[1], judged_[1]);
  q.recall_real = ratio(correct_[0], truth_[0]);
  q.recall_fake = ratio(correct_[1], truth_[1]);
  return q;
}

PseudoLabelQuality pseudo_label_quality(std::span<const PseudoLabel> assigned,
                                        std::span<const Label> truth) {
  if (assigned.size() != truth.size()) throw Error("pseudo_label_quality: size mismatch");
  PseudoLabelTally tally;
  for (std::size_t i = 0; i < assigned.size(); ++i) tally.add(assigned[i], truth[i]);
  return tally.result();
}

nlohmann::json to_json(const EpochMetrics& m) {
  return {{"epoch", m.epoch},
          {"lr", m.lr},
          {"steps", m.steps},
          {"data_order", m.data_order},
          {"losses", to_json(m.losses)},
          {"thresholds", m.thresholds ? to_json(*m.thresholds) : nlohmann::json(nullptr)},
          {"policy_state", m.policy_state},
          {"pseudo_labels", to_json(m.pseudo_labels)},
          {"val", m.val ? to_json(*m.val) : nlohmann::json(nullptr)}};
}

// ---------------------------------------------------------------------------

ConsensusLabeler::ConsensusLabeler(ThresholdRefresh refresh, BlipScoreMode mode)
    : refresh_(refresh), mode_(mode) {}

void ConsensusLabeler::begin_epoch(const LabelingContext& ctx) {
  epoch_thresholds_ = estimate_thresholds_for(ctx.model, *ctx.data.table, ctx.data.labeled, mode_);
  batch_sum_ = ThresholdSet{};
  batch_estimates_ = 0;
  fallbacks_ = 0;
}

std::vector<PseudoLabel> ConsensusLabeler::label_batch(
    const LabelingContext& ctx, std::span<const std::size_t> labeled_batch,
    std::span<const std::size_t> unlabeled_batch) {
  const auto& table = *ctx.data.table;
  ThresholdSet t = epoch_thresholds_;
  if (refresh_ == ThresholdRefresh::kPerBatch) {
    if (has_both_classes(table, labeled_batch)) {
      t = estimate_thresholds_for(ctx.model, table, labeled_batch, mode_);
      batch_sum_.clip_real += t.clip_real;
      batch_sum_.clip_fake += t.clip_fake;
      batch_sum_.blip_real += t.blip_real;
      batch_sum_.blip_fake += t.blip_fake;
      ++batch_estimates_;
    } else {
      ++fallbacks_;
    }
  }
  const auto scores = consensus_scores(ctx.model, table, unlabeled_batch, mode_);
  std::vector<PseudoLabel> labels(scores.size());
  for (std::size_t j = 0; j < scores.size(); ++j) labels[j] = assign_pseudo_label(scores[j], t);
  return labels;
}

std::optional<ThresholdSet> ConsensusLabeler::thresholds() const {
  if (refresh_ == ThresholdRefresh::kPerEpoch || batch_estimates_ == 0) return epoch_thresholds_;
  const auto n = static_cast<double>(batch_estimates_);
  return ThresholdSet{batch_sum_.clip_real / n, batch_sum_.clip_fake / n,
                      batch_sum_.blip_real / n, batch_sum_.blip_fake / n};
}

nlohmann::json ConsensusLabeler::epoch_state() const {
  return {{"threshold_refresh", to_string(refresh_)},
          {"blip_score_mode", to_string(mode_)},
          {"epoch_thresholds", to_json(epoch_thresholds_)},
          {"batch_estimates", batch_estimates_},
          {"batch_fallbacks", fallbacks_}};
}

// ---------------------------------------------------------------------------

BatchCycler::BatchCycler(std::vector<std::size_t> items, std::size_t batch_size, Rng rng)
    : items_(std::move(items)), batch_size_(std::min(batch_size, items_.size())), rng_(rng) {
  if (batch_size_ == 0) throw Error("BatchCycler: no items");
  rng_.shuffle(std::span(items_));
}

std::span<const std::size_t> BatchCycler::next() {
  if (cursor_ + batch_size_ > items_.size()) {
    rng_.shuffle(std::span(items_));
    cursor_ = 0;
  }
  std::span<const std::size_t> out(items_.data() + cursor_, batch_size_);
  cursor_ += batch_size_;
  return out;
}

namespace {

Model make_model(const TrainConfig& config, const TrainingData& data) {
  if (data.table == nullptr || data.table->size() == 0) throw Error("trainer: no data");
  const std::size_t dim = data.table->dim();
  return init_model(ModelConfig{dim, config.hidden == 0 ? dim : config.hidden, config.dropout,
                                config.bn_momentum, 1e-5},
                    config.seed);
}

const TrainingData& checked(const TrainingData& data) {
  if (data.table == nullptr) throw Error("trainer: no data");
  if (data.labeled.size() < 2 || !has_both_classes(*data.table, data.labeled)) {
    throw Error("trainer: the labeled split needs at least one Real and one Fake sample");
  }
  return data;
}

}  // namespace

Trainer::Trainer(TrainConfig config, const TrainingData& data, PseudoLabeler& labeler)
    : config_((config.validate(), std::move(config))),
      data_(checked(data)),
      labeler_(labeler),
      model_(make_model(config_, data_)),
      optimizer_(OptimizerState::for_model(model_, config_.adam_beta1, config_.adam_beta2,
                                           config_.adam_eps)),
      labeled_(data_.labeled, static_cast<std::size_t>(config_.batch_size),
               Rng::stream(config_.seed, streams::kLabeled)),
      unlabeled_(data_.unlabeled.empty()
                     ? std::nullopt
                     : std::optional<BatchCycler>(std::in_place, data_.unlabeled,
                                                  static_cast<std::size_t>(config_.batch_size),
                                                  Rng::stream(config_.seed, streams::kUnlabeled))),
      dropout_rng_(Rng::stream(config_.seed, streams::kDropout)) {}

StepResult Trainer::step(std::span<const std::size_t> labeled_batch,
                         std::span<const std::size_t> unlabeled_batch,
                         std::span<const PseudoLabel> pseudo_labels, double lr) {
  if (pseudo_labels.size() != unlabeled_batch.size()) {
    throw Error("trainer: pseudo-label count does not match the unlabeled batch");
  }
  const auto& table = *data_.table;
  std::vector<std::size_t> columns(labeled_batch.begin(), labeled_batch.end());
  TrainingBatch batch;
  batch.n_labeled = labeled_batch.size();
  batch.targets.reserve(labeled_batch.size() + unlabeled_batch.size());
  for (auto p : labeled_batch) batch.targets.push_back(target_of(table.labels[p]));
  for (std::size_t j = 0; j < unlabeled_batch.size(); ++j) {
    if (pseudo_labels[j] == PseudoLabel::kIgnore) continue;
    columns.push_back(unlabeled_batch[j]);
    batch.targets.push_back(pseudo_labels[j] == PseudoLabel::kFake ? 1.0 : 0.0);
  }
  batch.images = gather_columns(table.images, columns);
  batch.texts = gather_columns(table.texts, columns);

  const ForwardRecord record =
      forward_objective(model_, batch, config_.lambda, Mode::kTrain, &dropout_rng_);
  const Gradients grads = backward(model_, batch, record);
  update_running_stats(model_.head, record.head);
  adam_step(model_, grads, optimizer_, lr, config_.adapter_lr_scale);
  return StepResult{record.loss, batch.size() - batch.n_labeled};
}

std::size_t Trainer::steps_per_epoch() const {
  if (config_.steps_per_epoch > 0) return static_cast<std::size_t>(config_.steps_per_epoch);
  return unlabeled_ ? unlabeled_->batches_per_pass() : labeled_.batches_per_pass();
}

std::vector<LossBreakdown> Trainer::warmup(int epochs) {
  std::vector<LossBreakdown> out;
  const std::size_t steps = labeled_.batches_per_pass();
  for (int e = 0; e < epochs; ++e) {
    LossBreakdown sum{0.0, 0.0, 0.0, config_.lambda, 0.0};
    for (std::size_t s = 0; s < steps; ++s) {
      const auto lb_span = labeled_.next();
      const std::vector<std::size_t> lb(lb_span.begin(), lb_span.end());
      const StepResult r = step(lb, {}, {}, config_.lr0);
      sum.l_sup += r.loss.l_sup;
      sum.l_cc += r.loss.l_cc;
      sum.total += r.loss.total;
    }
    const auto n = static_cast<double>(steps);
    out.push_back(LossBreakdown{sum.l_sup / n, sum.l_cc / n, 0.0, config_.lambda, sum.total / n});
  }
  return out;
}

EpochMetrics Trainer::train_epoch(int epoch) {
  const auto& table = *data_.table;
  EpochMetrics m;
  m.epoch = epoch;
  m.lr = lr_schedule(epoch, config_.schedule());
  const LabelingContext ctx{model_, data_, config_, epoch};
  const bool use_unlabeled = labeler_.uses_unlabeled();
  if (use_unlabeled) labeler_.begin_epoch(ctx);

  const std::size_t steps = steps_per_epoch();

  std::uint64_t digest = kFnvOffset;
  PseudoLabelTally tally;
  LossBreakdown sum{0.0, 0.0, 0.0, config_.lambda, 0.0};
  for (std::size_t s = 0; s < steps; ++s) {
    const auto lb_span = labeled_.next();
    const std::vector<std::size_t> lb(lb_span.begin(), lb_span.end());
    std::span<const std::size_t> ub;
    if (unlabeled_) ub = unlabeled_->next();

    for (auto p : lb) fnv_mix(digest, table.ids[p]);
    fnv_mix(digest, ~std::uint64_t{0});
    for (auto p : ub) fnv_mix(digest, table.ids[p]);

    std::vector<PseudoLabel> labels(ub.size(), PseudoLabel::kIgnore);
    if (use_unlabeled && !ub.empty()) labels = labeler_.label_batch(ctx, lb, ub);
    for (std::size_t j = 0; j < ub.size(); ++j) tally.add(labels[j], table.labels[ub[j]]);

    const StepResult r = step(lb, ub, labels, m.lr);
    sum.l_sup += r.loss.l_sup;
    sum.l_cc += r.loss.l_cc;
    sum.l_unsup += r.loss.l_unsup;
    sum.total += r.loss.total;
  }

  const auto n = static_cast<double>(std::max<std::size_t>(steps, 1));
  m.steps = steps;
  m.data_order = hex64(digest);
  m.losses = LossBreakdown{sum.l_sup / n, sum.l_cc / n, sum.l_unsup / n, config_.lambda,
                           sum.total / n};
  m.thresholds = use_unlabeled ? labeler_.thresholds() : std::nullopt;
  m.policy_state = labeler_.epoch_state();
  m.pseudo_labels = tally.result();
  if (!data_.val.empty()) m.val = evaluate(model_, table, data_.val);

  if (config_.checkpoint_every > 0 && !config_.checkpoint_dir.empty() &&
      (epoch + 1) % config_.checkpoint_every == 0) {
    save_checkpoint(config_.checkpoint_dir / ("epoch_" + std::to_string(epoch + 1) + ".ckpt"),
                    model_, optimizer_, config_.to_json());
  }
  return m;
}

FitResult Trainer::fit() {
  const auto& table = *data_.table;
  const auto warm = warmup(config_.warmup_epochs);

  FitResult result;
  std::optional<int> best_epoch;
  EvalMetrics best_val;
  std::optional<EvalMetrics> best_test;
  for (int e = 0; e < config_.epochs; ++e) {
    EpochMetrics m = train_epoch(e);
    if (m.val && (!best_epoch || m.val->accuracy > best_val.accuracy)) {
      best_epoch = e;
      best_val = *m.val;
      if (!data_.test.empty()) best_test = evaluate(model_, table, data_.test);
    }
    result.history.push_back(std::move(m));
  }
  result.model = model_;
  result.optimizer = optimizer_;

  nlohmann::json report;
  report["method"] = labeler_.name();
  report["train_config"] = config_.to_json();

  std::size_t counts[2][2] = {{0, 0}, {0, 0}};
  for (auto p : data_.labeled) ++counts[0][table.labels[p] == Label::kFake ? 1 : 0];
  for (auto p : data_.unlabeled) {
    if (table.labels[p] != Label::kUnlabeled) ++counts[1][table.labels[p] == Label::kFake ? 1 : 0];
  }
  report["data"] = {{"dim", table.dim()},
                    {"labeled", {{"total", data_.labeled.size()},
                                 {"real", counts[0][0]},
                                 {"fake", counts[0][1]}}},
                    {"unlabeled", {{"total", data_.unlabeled.size()},
                                   {"real", counts[1][0]},
                                   {"fake", counts[1][1]}}},
                    {"val", data_.val.size()},
                    {"test", data_.test.size()}};

  auto warm_json = nlohmann::json::array();
  for (std::size_t i = 0; i < warm.size(); ++i) {
    warm_json.push_back({{"epoch", i}, {"losses", to_json(warm[i])}});
  }
  report["warmup"] = warm_json;

  auto history = nlohmann::json::array();
  auto thresholds = nlohmann::json::array();
  for (const auto& m : result.history) {
    history.push_back(to_json(m));
    thresholds.push_back(m.thresholds ? to_json(*m.thresholds) : nlohmann::json(nullptr));
  }
  report["history"] = history;
  report["thresholds_history"] = thresholds;

  nlohmann::json final_block = {{"epoch", config_.epochs - 1}};
  final_block["val"] = result.history.back().val ? to_json(*result.history.back().val)
                                                 : nlohmann::json(nullptr);
  if (!data_.test.empty()) {
    result.test = evaluate(model_, table, data_.test);
    final_block["test"] = to_json(result.test);
  } else {
    final_block["test"] = nullptr;
  }
  report["final"] = final_block;
  if (best_epoch) {
    report["best_val"] = {{"epoch", *best_epoch},
                          {"val", to_json(best_val)},
                          {"test", best_test ? to_json(*best_test) : nlohmann::json(nullptr)}};
  } else {
    report["best_val"] = nullptr;
  }
  result.report = std::move(report);
  return result;
}

}  // namespace covlm
