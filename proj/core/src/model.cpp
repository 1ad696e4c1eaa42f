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

#include "covlm/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace covlm {
namespace {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double clamp_prob(double p) { return std::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon); }

// (1 + s) / 2 mapped into the clamped probability range; `clamped` reports
// whether the clamp was active (zero derivative).
double similarity_prob(double s, bool* clamped) {
  const double raw = 0.5 * (1.0 + s);
  const double p = clamp_prob(raw);
  if (clamped != nullptr) *clamped = p != raw;
  return p;
}

void fill_uniform(Matrix& m, Rng& rng, double bound) {
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = bound * (2.0 * rng.uniform() - 1.0);
  }
}

void fill_uniform(Vector& v, Rng& rng, double bound) {
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = bound * (2.0 * rng.uniform() - 1.0);
}

}  // namespace

AdapterParams AdapterParams::identity(std::size_t dim) {
  const auto d = static_cast<Eigen::Index>(dim);
  return AdapterParams{Matrix::Identity(d, d)};
}

Model init_model(const ModelConfig& config, std::uint64_t seed) {
  if (config.dim < 1 || config.hidden < 1) throw ConfigError("model: dim and hidden must be >= 1");
  if (config.dropout < 0.0 || config.dropout >= 1.0) {
    throw ConfigError("model: dropout must lie in [0, 1)");
  }
  const auto d = static_cast<Eigen::Index>(config.dim);
  const auto h = static_cast<Eigen::Index>(config.hidden);
  Rng rng = Rng::stream(seed, streams::kInit);

  Model m;
  m.adapter = AdapterParams::identity(config.dim);
  auto& head = m.head;
  head.w1.resize(h, d);
  head.b1.resize(h);
  head.w2.resize(h);
  const double bound1 = 1.0 / std::sqrt(static_cast<double>(d));
  const double bound2 = 1.0 / std::sqrt(static_cast<double>(h));
  fill_uniform(head.w1, rng, bound1);
  fill_uniform(head.b1, rng, bound1);
  fill_uniform(head.w2, rng, bound2);
  head.b2 = bound2 * (2.0 * rng.uniform() - 1.0);
  head.gamma = Vector::Ones(h);
  head.beta = Vector::Zero(h);
  head.running_mean = Vector::Zero(h);
  head.running_var = Vector::Ones(h);
  head.dropout = config.dropout;
  head.bn_momentum = config.bn_momentum;
  head.bn_eps = config.bn_eps;
  return m;
}

Vector adapt_image(const AdapterParams& adapter, const Vector& image_emb) {
  if (adapter.a.cols() != image_emb.size()) {
    throw Error("adapt_image: dimension mismatch");
  }
  Vector z = adapter.a * image_emb;
  const double norm = z.norm();
  if (!(norm >= 1e-12)) throw Error("adapt_image: adapted vector has (near) zero norm");
  return z / norm;
}

Matrix adapt_images(const AdapterParams& adapter, const Matrix& images, Vector* norms) {
  if (adapter.a.cols() != images.rows()) throw Error("adapt_images: dimension mismatch");
  Matrix z = adapter.a * images;
  Vector n = z.colwise().norm().transpose();
  for (Eigen::Index j = 0; j < n.size(); ++j) {
    if (!(n(j) >= 1e-12)) {
      throw Error("adapt_images: column " + std::to_string(j) + " has (near) zero norm");
    }
    z.col(j) /= n(j);
  }
  if (norms != nullptr) *norms = std::move(n);
  return z;
}

HeadCache head_forward(const HeadParams& head, const Matrix& adapted_images, const Matrix& texts,
                       Mode mode, Rng* dropout_rng) {
  if (adapted_images.rows() != head.w1.cols() || texts.rows() != head.w1.cols() ||
      adapted_images.cols() != texts.cols()) {
    throw Error("head_forward: dimension mismatch");
  }
  const Eigen::Index n = texts.cols();
  const Eigen::Index h = head.w1.rows();
  HeadCache c;
  c.mode = mode;
  c.x = adapted_images.cwiseProduct(texts);
  Matrix pre = head.w1 * c.x;
  pre.colwise() += head.b1;

  if (mode == Mode::kTrain) {
    if (n < 2) throw Error("head_forward: train-mode batch normalization needs >= 2 samples");
    c.mean = pre.rowwise().mean();
    pre.colwise() -= c.mean;
    c.var = pre.cwiseAbs2().rowwise().mean();
  } else {
    c.mean = head.running_mean;
    c.var = head.running_var;
    pre.colwise() -= c.mean;
  }
  const Vector inv_std = (c.var.array() + head.bn_eps).rsqrt().matrix();
  c.a_hat = inv_std.asDiagonal() * pre;
  c.bn = head.gamma.asDiagonal() * c.a_hat;
  c.bn.colwise() += head.beta;
  c.out = c.bn.cwiseMax(0.0);

  if (mode == Mode::kTrain && head.dropout > 0.0) {
    if (dropout_rng == nullptr) throw Error("head_forward: train mode with dropout needs an rng");
    const double keep = 1.0 - head.dropout;
    c.mask.resize(h, n);
    for (Eigen::Index j = 0; j < n; ++j) {
      for (Eigen::Index i = 0; i < h; ++i) {
        c.mask(i, j) = dropout_rng->uniform() < keep ? 1.0 / keep : 0.0;
      }
    }
    c.out = c.out.cwiseProduct(c.mask);
  }

  const Eigen::RowVectorXd logits = (head.w2.transpose() * c.out).array() + head.b2;
  c.y_hat.resize(n);
  c.clamped.assign(static_cast<std::size_t>(n), false);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double p = sigmoid(logits(j));
    c.y_hat(j) = clamp_prob(p);
    c.clamped[static_cast<std::size_t>(j)] = c.y_hat(j) != p;
  }
  return c;
}

double predict(const Model& model, const Vector& image_emb, const Vector& text_emb) {
  Matrix img = adapt_image(model.adapter, image_emb);
  Matrix txt = text_emb;
  return head_forward(model.head, img, txt, Mode::kEval, nullptr).y_hat(0);
}

Vector predict_batch(const Model& model, const Matrix& images, const Matrix& texts) {
  return head_forward(model.head, adapt_images(model.adapter, images), texts, Mode::kEval, nullptr)
      .y_hat;
}

void update_running_stats(HeadParams& head, const HeadCache& cache) {
  if (cache.mode != Mode::kTrain) return;
  const auto n = static_cast<double>(cache.x.cols());
  const double m = head.bn_momentum;
  head.running_mean = (1.0 - m) * head.running_mean + m * cache.mean;
  head.running_var = (1.0 - m) * head.running_var + m * (n / (n - 1.0)) * cache.var;
}

// ---------------------------------------------------------------------------

double binary_cross_entropy(double y_hat, double target) {
  return -(target * std::log(y_hat) + (1.0 - target) * std::log(1.0 - y_hat));
}

double loss_supervised(std::span<const double> y_hat, std::span<const double> targets) {
  if (y_hat.empty()) throw Error("loss_supervised: empty batch");
  if (y_hat.size() != targets.size()) throw Error("loss_supervised: size mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < y_hat.size(); ++i) {
    sum += binary_cross_entropy(clamp_prob(y_hat[i]), targets[i]);
  }
  return sum / static_cast<double>(y_hat.size());
}

double loss_contrastive_cluster(std::span<const double> clip_scores,
                                std::span<const double> targets) {
  if (clip_scores.empty()) throw Error("loss_contrastive_cluster: empty batch");
  if (clip_scores.size() != targets.size()) throw Error("loss_contrastive_cluster: size mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < clip_scores.size(); ++i) {
    const double s = similarity_prob(clip_scores[i], nullptr);
    sum += -(targets[i] * std::log(1.0 - s) + (1.0 - targets[i]) * std::log(s));
  }
  return sum / static_cast<double>(clip_scores.size());
}

UnsupervisedLoss loss_unsupervised(std::span<const double> y_hat,
                                   std::span<const PseudoLabel> pseudo_labels) {
  if (y_hat.size() != pseudo_labels.size()) throw Error("loss_unsupervised: size mismatch");
  UnsupervisedLoss out;
  double sum = 0.0;
  for (std::size_t i = 0; i < y_hat.size(); ++i) {
    if (pseudo_labels[i] == PseudoLabel::kIgnore) continue;
    const double target = pseudo_labels[i] == PseudoLabel::kFake ? 1.0 : 0.0;
    sum += binary_cross_entropy(clamp_prob(y_hat[i]), target);
    ++out.accepted;
  }
  if (out.accepted > 0) out.value = sum / static_cast<double>(out.accepted);
  return out;
}

LossBreakdown total_loss(double l_sup, double l_cc, double l_unsup, double lambda) {
  return LossBreakdown{l_sup, l_cc, l_unsup, lambda, l_sup + l_unsup + lambda * l_cc};
}

ForwardRecord forward_objective(const Model& model, const TrainingBatch& batch, double lambda,
                                Mode mode, Rng* dropout_rng) {
  const std::size_t n = batch.size();
  if (batch.n_labeled == 0 || batch.n_labeled > n) {
    throw Error("forward_objective: batch needs at least one labeled column");
  }
  if (static_cast<std::size_t>(batch.images.cols()) != n ||
      static_cast<std::size_t>(batch.texts.cols()) != n) {
    throw Error("forward_objective: target count does not match batch columns");
  }
  ForwardRecord r;
  r.lambda = lambda;
  r.adapted = adapt_images(model.adapter, batch.images, &r.adapt_norms);
  r.clip_scores = r.adapted.cwiseProduct(batch.texts).colwise().sum().transpose();
  r.head = head_forward(model.head, r.adapted, batch.texts, mode, dropout_rng);

  const std::span<const double> y_hat(r.head.y_hat.data(), n);
  const std::span<const double> targets(batch.targets);
  const std::size_t nl = batch.n_labeled;
  const double l_sup = loss_supervised(y_hat.first(nl), targets.first(nl));
  const double l_cc = loss_contrastive_cluster(
      std::span<const double>(r.clip_scores.data(), nl), targets.first(nl));
  const double l_unsup = n > nl ? loss_supervised(y_hat.subspan(nl), targets.subspan(nl)) : 0.0;
  r.loss = total_loss(l_sup, l_cc, l_unsup, lambda);
  r.valid = true;
  return r;
}

Gradients Gradients::zeros_like(const Model& model) {
  Gradients g;
  g.a = Matrix::Zero(model.adapter.a.rows(), model.adapter.a.cols());
  g.w1 = Matrix::Zero(model.head.w1.rows(), model.head.w1.cols());
  g.b1 = Vector::Zero(model.head.b1.size());
  g.gamma = Vector::Zero(model.head.gamma.size());
  g.beta = Vector::Zero(model.head.beta.size());
  g.w2 = Vector::Zero(model.head.w2.size());
  g.b2 = 0.0;
  return g;
}

double Gradients::squared_norm() const {
  return a.squaredNorm() + w1.squaredNorm() + b1.squaredNorm() + gamma.squaredNorm() +
         beta.squaredNorm() + w2.squaredNorm() + b2 * b2;
}

Gradients backward(const Model& model, const TrainingBatch& batch, const ForwardRecord& record) {
  if (!record.valid) throw Error("backward: no recorded forward evaluation");
  const auto& head = model.head;
  const auto& c = record.head;
  const Eigen::Index n = static_cast<Eigen::Index>(batch.size());
  const Eigen::Index nl = static_cast<Eigen::Index>(batch.n_labeled);
  const Eigen::Index nu = n - nl;

  // dL/dlogit per column; the two cross-entropy terms are means over their
  // own column ranges.
  Eigen::RowVectorXd g_logit(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double weight = j < nl ? 1.0 / static_cast<double>(nl) : 1.0 / static_cast<double>(nu);
    g_logit(j) = c.clamped[static_cast<std::size_t>(j)]
                     ? 0.0
                     : weight * (c.y_hat(j) - batch.targets[static_cast<std::size_t>(j)]);
  }

  Gradients g;
  g.b2 = g_logit.sum();
  g.w2 = c.out * g_logit.transpose();

  Matrix g_bn = head.w2 * g_logit;  // h x n
  if (c.mask.size() > 0) g_bn = g_bn.cwiseProduct(c.mask);
  g_bn = (c.bn.array() > 0.0).select(g_bn, 0.0);

  g.gamma = g_bn.cwiseProduct(c.a_hat).rowwise().sum();
  g.beta = g_bn.rowwise().sum();

  const Vector inv_std = (c.var.array() + head.bn_eps).rsqrt().matrix();
  const Matrix g_ahat = head.gamma.asDiagonal() * g_bn;
  Matrix g_pre;
  if (c.mode == Mode::kTrain) {
    const Vector mean_g = g_ahat.rowwise().mean();
    const Vector mean_ga = g_ahat.cwiseProduct(c.a_hat).rowwise().mean();
    g_pre = g_ahat;
    g_pre.colwise() -= mean_g;
    g_pre -= c.a_hat.cwiseProduct(mean_ga.replicate(1, n));
    g_pre = inv_std.asDiagonal() * g_pre;
  } else {
    g_pre = inv_std.asDiagonal() * g_ahat;
  }

  g.w1 = g_pre * c.x.transpose();
  g.b1 = g_pre.rowwise().sum();

  // Back through the hadamard product into the adapted image embedding.
  Matrix g_adapted = (head.w1.transpose() * g_pre).cwiseProduct(batch.texts);

  // Contrastive clustering term on the labeled columns.
  if (record.lambda != 0.0) {
    for (Eigen::Index j = 0; j < nl; ++j) {
      bool clamped = false;
      const double s = similarity_prob(record.clip_scores(j), &clamped);
      if (clamped) continue;
      const double y = batch.targets[static_cast<std::size_t>(j)];
      const double d_s = -(-y / (1.0 - s) + (1.0 - y) / s);
      const double coeff = record.lambda / static_cast<double>(nl) * d_s * 0.5;
      g_adapted.col(j) += coeff * batch.texts.col(j);
    }
  }

  // Through the normalization h = z / ||z||.
  Matrix g_z(g_adapted.rows(), n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto h = record.adapted.col(j);
    const double proj = h.dot(g_adapted.col(j));
    g_z.col(j) = (g_adapted.col(j) - proj * h) / record.adapt_norms(j);
  }
  g.a = g_z * batch.images.transpose();
  return g;
}

std::array<ParamBlock, kNumParamBlocks> param_blocks(Model& model) {
  auto& h = model.head;
  auto view = [](auto& m) {
    return std::span<double>(m.data(), static_cast<std::size_t>(m.size()));
  };
  return {ParamBlock{"a", view(model.adapter.a)}, ParamBlock{"w1", view(h.w1)},
          ParamBlock{"b1", view(h.b1)},           ParamBlock{"gamma", view(h.gamma)},
          ParamBlock{"beta", view(h.beta)},       ParamBlock{"w2", view(h.w2)},
          ParamBlock{"b2", std::span<double>(&h.b2, 1)}};
}

std::array<ParamBlock, kNumParamBlocks> param_blocks(Gradients& g) {
  auto view = [](auto& m) {
    return std::span<double>(m.data(), static_cast<std::size_t>(m.size()));
  };
  return {ParamBlock{"a", view(g.a)},         ParamBlock{"w1", view(g.w1)},
          ParamBlock{"b1", view(g.b1)},       ParamBlock{"gamma", view(g.gamma)},
          ParamBlock{"beta", view(g.beta)},   ParamBlock{"w2", view(g.w2)},
          ParamBlock{"b2", std::span<double>(&g.b2, 1)}};
}

std::array<ConstParamBlock, kNumParamBlocks> param_blocks(const Model& model) {
  const auto mutable_blocks = param_blocks(const_cast<Model&>(model));
  std::array<ConstParamBlock, kNumParamBlocks> out;
  for (std::size_t i = 0; i < kNumParamBlocks; ++i) {
    out[i] = {mutable_blocks[i].name, mutable_blocks[i].values};
  }
  return out;
}

std::array<ConstParamBlock, kNumParamBlocks> param_blocks(const Gradients& grads) {
  const auto mutable_blocks = param_blocks(const_cast<Gradients&>(grads));
  std::array<ConstParamBlock, kNumParamBlocks> out;
  for (std::size_t i = 0; i < kNumParamBlocks; ++i) {
    out[i] = {mutable_blocks[i].name, mutable_blocks[i].values};
  }
  return out;
}

OptimizerState OptimizerState::for_model(const Model& model, double beta1, double beta2,
                                         double eps) {
  OptimizerState s;
  s.m = Gradients::zeros_like(model);
  s.v = Gradients::zeros_like(model);
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.eps = eps;
  return s;
}

void adam_step(Model& model, const Gradients& grads, OptimizerState& state, double lr,
               double adapter_lr_scale) {
  const auto g_blocks = param_blocks(grads);
  for (const auto& block : g_blocks) {
    for (double x : block.values) {
      if (!std::isfinite(x)) {
        throw Error("adam_step: non-finite gradient in parameter \"" + std::string(block.name) +
                    "\"");
      }
    }
  }
  auto p_blocks = param_blocks(model);
  auto m_blocks = param_blocks(state.m);
  auto v_blocks = param_blocks(state.v);
  for (std::size_t b = 0; b < kNumParamBlocks; ++b) {
    if (p_blocks[b].values.size() != g_blocks[b].values.size() ||
        m_blocks[b].values.size() != g_blocks[b].values.size()) {
      throw Error("adam_step: shape mismatch in parameter \"" + std::string(p_blocks[b].name) +
                  "\"");
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(state.beta1, t);
  const double bias2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t b = 0; b < kNumParamBlocks; ++b) {
    auto p = p_blocks[b].values;
    auto g = g_blocks[b].values;
    auto m = m_blocks[b].values;
    auto v = v_blocks[b].values;
    const double step = b == 0 ? lr * adapter_lr_scale : lr;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bias1;
      const double v_hat = v[i] / bias2;
      p[i] -= step * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

double lr_schedule(int epoch, const ScheduleConfig& config) {
  if (epoch < 0 || epoch >= config.total_epochs) {
    throw Error("lr_schedule: epoch " + std::to_string(epoch) + " outside [0, " +
                std::to_string(config.total_epochs) + ")");
  }
  if (epoch < config.constant_epochs) return config.lr0;
  const int span = config.total_epochs - 1 - config.constant_epochs;
  if (span <= 0) return config.lr_min;
  const double progress = static_cast<double>(epoch - config.constant_epochs) / span;
  return config.lr_min +
         0.5 * (config.lr0 - config.lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace covlm
