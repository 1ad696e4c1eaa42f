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

#ifndef COVLM_MODEL_HPP_
#define COVLM_MODEL_HPP_

#include <array>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "covlm/consensus.hpp"
#include "covlm/rng.hpp"
#include "covlm/store.hpp"

namespace covlm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Predictions are clamped to [kProbEpsilon, 1 - kProbEpsilon] before any log.
inline constexpr double kProbEpsilon = 1e-7;

// Binary target used by every cross-entropy term: 1 for Fake, 0 for Real.
inline double target_of(Label label) { return label == Label::kFake ? 1.0 : 0.0; }

// Trainable d x d map on the image embedding, followed by re-normalization.
// Stands in for fine-tuning the last image-encoder layers.
struct AdapterParams {
  Matrix a;

  static AdapterParams identity(std::size_t dim);
};

// Two fully connected layers with batch normalization, ReLU and inverted
// dropout in between:
//   logit = w2 . dropout(relu(bn(w1 x + b1))) + b2
struct HeadParams {
  Matrix w1;  // h x d
  Vector b1;
  Vector gamma;
  Vector beta;
  Vector running_mean;
  Vector running_var;
  Vector w2;  // the single output row, length h
  double b2 = 0.0;

  double dropout = 0.5;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
};

struct Model {
  AdapterParams adapter;
  HeadParams head;

  std::size_t dim() const { return static_cast<std::size_t>(adapter.a.rows()); }
  std::size_t hidden() const { return static_cast<std::size_t>(head.w1.rows()); }
};

struct ModelConfig {
  std::size_t dim = 64;
  std::size_t hidden = 64;
  double dropout = 0.5;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
};

// Identity adapter; linear layers drawn U(-1/sqrt(fan_in), 1/sqrt(fan_in));
// gamma = 1, beta = 0, running statistics (0, 1).
Model init_model(const ModelConfig& config, std::uint64_t seed);

enum class Mode { kTrain, kEval };

// normalize(A v). Throws Error if ||A v|| < 1e-12 or dimensions disagree.
Vector adapt_image(const AdapterParams& adapter, const Vector& image_emb);

// Column-wise adapt_image over a d x n batch. Optionally returns ||A v||.
Matrix adapt_images(const AdapterParams& adapter, const Matrix& images, Vector* norms = nullptr);

// Everything the backward pass needs from one batch forward.
struct HeadCache {
  Mode mode = Mode::kEval;
  Matrix x;       // adapted image (.) text, d x n
  Matrix a_hat;   // normalized pre-activations, h x n
  Vector mean;    // statistics used for normalization
  Vector var;
  Matrix bn;      // gamma * a_hat + beta
  Matrix mask;    // dropout multipliers (empty in eval mode)
  Matrix out;     // relu(bn) * mask
  Vector y_hat;   // clamped probabilities of Fake
  std::vector<bool> clamped;
};

// Batch forward of the head on already adapted images. In train mode batch
// statistics are used and dropout masks are drawn from `dropout_rng`
// (required when dropout > 0); eval mode uses running statistics and never
// touches the rng.
HeadCache head_forward(const HeadParams& head, const Matrix& adapted_images, const Matrix& texts,
                       Mode mode, Rng* dropout_rng);

// Eval-mode probability of Fake for one sample, adapter included.
double predict(const Model& model, const Vector& image_emb, const Vector& text_emb);

// Eval-mode probabilities for a d x n batch.
Vector predict_batch(const Model& model, const Matrix& images, const Matrix& texts);

// Moves running statistics towards the batch statistics of a train-mode
// forward (unbiased variance, PyTorch convention).
void update_running_stats(HeadParams& head, const HeadCache& cache);

// ---------------------------------------------------------------------------
// Objectives

double binary_cross_entropy(double y_hat, double target);

// Mean BCE over the batch; throws on an empty batch or size mismatch.
double loss_supervised(std::span<const double> y_hat, std::span<const double> targets);

// Similarities are mapped to (1 + s) / 2 and clamped before the logs; Real
// pairs are pulled towards 1 and Fake pairs towards 0.
double loss_contrastive_cluster(std::span<const double> clip_scores,
                                std::span<const double> targets);

struct UnsupervisedLoss {
  double value = 0.0;
  std::size_t accepted = 0;
};

// Mean BCE against pseudo-labels over the accepted entries only.
UnsupervisedLoss loss_unsupervised(std::span<const double> y_hat,
                                   std::span<const PseudoLabel> pseudo_labels);

struct LossBreakdown {
  double l_sup = 0.0;
  double l_cc = 0.0;
  double l_unsup = 0.0;
  double lambda = 0.0;
  double total = 0.0;
};

LossBreakdown total_loss(double l_sup, double l_cc, double l_unsup, double lambda);

// One optimization batch: the first n_labeled columns carry ground-truth
// targets, the remaining columns are accepted pseudo-labeled samples.
struct TrainingBatch {
  Matrix images;  // d x n, raw (unadapted) image embeddings
  Matrix texts;   // d x n
  std::vector<double> targets;
  std::size_t n_labeled = 0;

  std::size_t size() const { return targets.size(); }
};

// A recorded forward evaluation of the full objective.
struct ForwardRecord {
  bool valid = false;
  double lambda = 0.0;
  LossBreakdown loss;
  Matrix adapted;      // d x n
  Vector adapt_norms;  // ||A v|| per column
  Vector clip_scores;  // <adapted image, text> per column
  HeadCache head;
};

ForwardRecord forward_objective(const Model& model, const TrainingBatch& batch, double lambda,
                                Mode mode, Rng* dropout_rng);

// Gradients of every trainable parameter, same shapes as the model.
struct Gradients {
  Matrix a;
  Matrix w1;
  Vector b1;
  Vector gamma;
  Vector beta;
  Vector w2;
  double b2 = 0.0;

  static Gradients zeros_like(const Model& model);
  double squared_norm() const;
};

// Exact gradients of forward_objective's total loss. Throws Error when the
// record is not valid.
Gradients backward(const Model& model, const TrainingBatch& batch, const ForwardRecord& record);

// Named views over trainable storage, in checkpoint order:
// a, w1, b1, gamma, beta, w2, b2.
struct ParamBlock {
  std::string_view name;
  std::span<double> values;
};
inline constexpr std::size_t kNumParamBlocks = 7;
std::array<ParamBlock, kNumParamBlocks> param_blocks(Model& model);
std::array<ParamBlock, kNumParamBlocks> param_blocks(Gradients& grads);

struct ConstParamBlock {
  std::string_view name;
  std::span<const double> values;
};
std::array<ConstParamBlock, kNumParamBlocks> param_blocks(const Model& model);
std::array<ConstParamBlock, kNumParamBlocks> param_blocks(const Gradients& grads);

// ---------------------------------------------------------------------------
// Optimization

struct OptimizerState {
  Gradients m;
  Gradients v;
  std::int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static OptimizerState for_model(const Model& model, double beta1 = 0.9, double beta2 = 0.999,
                                  double eps = 1e-8);
};

// Adam with bias correction. Throws Error naming the parameter block when a
// gradient entry is not finite; the model is left untouched in that case.
// The adapter block steps with lr * adapter_lr_scale.
void adam_step(Model& model, const Gradients& grads, OptimizerState& state, double lr,
               double adapter_lr_scale = 1.0);

struct ScheduleConfig {
  double lr0 = 5e-4;
  double lr_min = 0.0;
  int constant_epochs = 20;
  int total_epochs = 40;
};

// lr0 for the first constant_epochs, then cosine annealing that reaches
// lr_min on the last epoch.
double lr_schedule(int epoch, const ScheduleConfig& config);

}  // namespace covlm

#endif  // COVLM_MODEL_HPP_
