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
#include <utility>
#include <vector>

#include <gtest/gtest.h>

namespace covlm {
namespace {

Matrix cols(std::initializer_list<std::initializer_list<double>> columns) {
  const auto n = static_cast<Eigen::Index>(columns.size());
  const auto d = static_cast<Eigen::Index>(columns.begin()->size());
  Matrix m(d, n);
  Eigen::Index j = 0;
  for (const auto& c : columns) {
    Eigen::Index i = 0;
    for (double v : c) m(i++, j) = v;
    ++j;
  }
  return m;
}

// Fixed d=2, h=2 head whose outputs were worked out by hand.
Model toy_model() {
  Model m;
  m.adapter = AdapterParams::identity(2);
  m.head.w1.resize(2, 2);
  m.head.w1 << 1.0, -1.0, 0.5, 2.0;
  m.head.b1 = Vector{{0.1, -0.2}};
  m.head.gamma = Vector{{2.0, 1.0}};
  m.head.beta = Vector{{0.0, -0.1}};
  m.head.running_mean = Vector{{0.05, 0.5}};
  m.head.running_var = Vector{{0.25, 4.0}};
  m.head.w2 = Vector{{1.5, -2.0}};
  m.head.b2 = 0.3;
  m.head.dropout = 0.0;
  return m;
}

Matrix random_unit_columns(Rng& rng, Eigen::Index d, Eigen::Index n) {
  Matrix m(d, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < d; ++i) m(i, j) = rng.normal();
    m.col(j).normalize();
  }
  return m;
}

// ---------------------------------------------------------------------------

TEST(AdaptImage, IdentityAndScaleInvariance) {
  Rng rng(1);
  const Vector v = random_unit_columns(rng, 5, 1).col(0);
  const auto id = AdapterParams::identity(5);
  EXPECT_LT((adapt_image(id, v) - v).norm(), 1e-15);
  AdapterParams twice{2.0 * Matrix::Identity(5, 5)};
  EXPECT_LT((adapt_image(twice, v) - v).norm(), 1e-15);

  AdapterParams a{Matrix::Random(5, 5)};
  AdapterParams a3{3.7 * a.a};
  EXPECT_LT((adapt_image(a, v) - adapt_image(a3, v)).norm(), 1e-14);
}

TEST(AdaptImage, MatchesBruteForceProduct) {
  Rng rng(2);
  const int d = 7;
  Matrix a(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) a(i, j) = rng.normal();
  const Vector v = random_unit_columns(rng, d, 1).col(0);
  std::vector<double> z(d, 0.0);
  double norm2 = 0.0;
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) z[i] += a(i, j) * v(j);
    norm2 += z[i] * z[i];
  }
  const Vector got = adapt_image(AdapterParams{a}, v);
  for (int i = 0; i < d; ++i) EXPECT_NEAR(got(i), z[i] / std::sqrt(norm2), 1e-12);
}

TEST(AdaptImage, ZeroResultAndMismatchAreErrors) {
  AdapterParams zero{Matrix::Zero(3, 3)};
  EXPECT_THROW(adapt_image(zero, Vector::Ones(3)), Error);
  EXPECT_THROW(adapt_image(AdapterParams::identity(3), Vector::Ones(4)), Error);
}

TEST(HeadForward, ZeroOutputLayerGivesOneHalf) {
  Model m = init_model({8, 4, 0.5, 0.1, 1e-5}, 3);
  m.head.w2.setZero();
  m.head.b2 = 0.0;
  Rng rng(4), drop(5);
  const Matrix img = random_unit_columns(rng, 8, 6), txt = random_unit_columns(rng, 8, 6);
  for (Mode mode : {Mode::kEval, Mode::kTrain}) {
    const auto c = head_forward(m.head, img, txt, mode, &drop);
    for (Eigen::Index j = 0; j < 6; ++j) EXPECT_EQ(c.y_hat(j), 0.5);
  }
}

TEST(HeadForward, EvalModeIgnoresTheRng) {
  Model m = init_model({8, 6, 0.5, 0.1, 1e-5}, 3);
  Rng rng(4);
  const Matrix img = random_unit_columns(rng, 8, 5), txt = random_unit_columns(rng, 8, 5);
  Rng r1(1), r2(999);
  const auto a = head_forward(m.head, img, txt, Mode::kEval, &r1);
  const auto b = head_forward(m.head, img, txt, Mode::kEval, &r2);
  const auto c = head_forward(m.head, img, txt, Mode::kEval, nullptr);
  EXPECT_EQ(a.y_hat, b.y_hat);
  EXPECT_EQ(a.y_hat, c.y_hat);
}

TEST(HeadForward, HandComputedEvalPass) {
  const Model m = toy_model();
  const Matrix img = cols({{0.6, 0.8}, {1.0, 0.0}});
  const Matrix txt = cols({{0.8, 0.6}, {0.6, -0.8}});
  const auto c = head_forward(m.head, img, txt, Mode::kEval, nullptr);
  EXPECT_NEAR(c.y_hat(0), 0.5744412028914225, 1e-10);
  EXPECT_NEAR(c.y_hat(1), 0.9852248329485626, 1e-10);
  EXPECT_NEAR(predict(m, img.col(0), txt.col(0)), 0.5744412028914225, 1e-10);
}

TEST(HeadForward, HandComputedTrainPassAndRunningStats) {
  Model m = toy_model();
  const Matrix img = cols({{0.6, 0.8}, {1.0, 0.0}});
  const Matrix txt = cols({{0.8, 0.6}, {0.6, -0.8}});
  const auto c = head_forward(m.head, img, txt, Mode::kTrain, nullptr);
  EXPECT_NEAR(c.y_hat(0), 0.18243288890597148, 1e-10);
  EXPECT_NEAR(c.y_hat(1), 0.964423093114642, 1e-10);
  EXPECT_NEAR(c.mean(0), 0.4, 1e-12);
  EXPECT_NEAR(c.var(1), 0.2025, 1e-12);

  update_running_stats(m.head, c);
  EXPECT_NEAR(m.head.running_mean(0), 0.085, 1e-12);
  EXPECT_NEAR(m.head.running_mean(1), 0.505, 1e-12);
  // Running variance takes the unbiased batch estimate.
  EXPECT_NEAR(m.head.running_var(0), 0.243, 1e-12);
  EXPECT_NEAR(m.head.running_var(1), 3.6405, 1e-12);
}

TEST(HeadForward, OutputsStayInsideTheClamp) {
  Model m = toy_model();
  m.head.b2 = 100.0;
  const Matrix img = cols({{0.6, 0.8}}), txt = cols({{0.8, 0.6}});
  auto c = head_forward(m.head, img, txt, Mode::kEval, nullptr);
  EXPECT_EQ(c.y_hat(0), 1.0 - kProbEpsilon);
  EXPECT_TRUE(c.clamped[0]);
  m.head.b2 = -100.0;
  c = head_forward(m.head, img, txt, Mode::kEval, nullptr);
  EXPECT_EQ(c.y_hat(0), kProbEpsilon);
}

TEST(HeadForward, DropoutScalesKeptUnits) {
  Model m = init_model({4, 64, 0.5, 0.1, 1e-5}, 1);
  Rng rng(4), drop(6);
  const Matrix img = random_unit_columns(rng, 4, 8), txt = random_unit_columns(rng, 4, 8);
  const auto c = head_forward(m.head, img, txt, Mode::kTrain, &drop);
  int kept = 0;
  for (Eigen::Index i = 0; i < c.mask.size(); ++i) {
    const double v = c.mask.data()[i];
    EXPECT_TRUE(v == 0.0 || v == 2.0);
    kept += v != 0.0;
  }
  EXPECT_GT(kept, 200);
  EXPECT_LT(kept, 312);
}

TEST(HeadForward, DimensionMismatchIsAnError) {
  const Model m = toy_model();
  EXPECT_THROW(head_forward(m.head, Matrix::Ones(3, 1), Matrix::Ones(3, 1), Mode::kEval, nullptr),
               Error);
}

// ---------------------------------------------------------------------------

TEST(Losses, SupervisedExamples) {
  const std::vector<double> half{0.5}, one{1.0};
  EXPECT_NEAR(loss_supervised(half, one), std::log(2.0), 1e-15);
  const std::vector<double> sure{1.0 - kProbEpsilon};
  EXPECT_NEAR(loss_supervised(sure, one), kProbEpsilon, 1e-12);
  EXPECT_THROW(loss_supervised(std::vector<double>{}, std::vector<double>{}), Error);
}

TEST(Losses, SupervisedMatchesBruteForce) {
  Rng rng(7);
  std::vector<double> y(32), t(32);
  double sum = 0.0;
  for (int i = 0; i < 32; ++i) {
    y[i] = 0.01 + 0.98 * rng.uniform();
    t[i] = static_cast<double>(rng.below(2));
    sum += t[i] == 1.0 ? -std::log(y[i]) : -std::log(1.0 - y[i]);
  }
  EXPECT_NEAR(loss_supervised(y, t), sum / 32.0, 1e-12);
}

TEST(Losses, ContrastiveClusterExamples) {
  const std::vector<double> zero{0.0}, real{0.0}, fake{1.0}, aligned{1.0};
  EXPECT_NEAR(loss_contrastive_cluster(zero, real), std::log(2.0), 1e-15);
  EXPECT_NEAR(loss_contrastive_cluster(zero, fake), std::log(2.0), 1e-15);
  EXPECT_NEAR(loss_contrastive_cluster(aligned, real), kProbEpsilon, 1e-12);
  // An aligned fake pair is penalized at the clamp.
  EXPECT_NEAR(loss_contrastive_cluster(aligned, fake), -std::log(kProbEpsilon), 1e-9);
  EXPECT_THROW(loss_contrastive_cluster(std::vector<double>{}, std::vector<double>{}), Error);
}

TEST(Losses, ContrastiveClusterMatchesBruteForce) {
  Rng rng(8);
  std::vector<double> s(40), t(40);
  double sum = 0.0;
  for (int i = 0; i < 40; ++i) {
    s[i] = 2.0 * rng.uniform() - 1.0;
    t[i] = static_cast<double>(rng.below(2));
    const double p = std::clamp((1.0 + s[i]) / 2.0, kProbEpsilon, 1.0 - kProbEpsilon);
    sum += t[i] == 1.0 ? -std::log(1.0 - p) : -std::log(p);
  }
  EXPECT_NEAR(loss_contrastive_cluster(s, t), sum / 40.0, 1e-12);
}

TEST(Losses, UnsupervisedSkipsIgnoredEntries) {
  const std::vector<double> y{0.3, 0.5, 0.9};
  const std::vector<PseudoLabel> none(3, PseudoLabel::kIgnore);
  const auto empty = loss_unsupervised(y, none);
  EXPECT_EQ(empty.value, 0.0);
  EXPECT_EQ(empty.accepted, 0u);

  const std::vector<PseudoLabel> one{PseudoLabel::kIgnore, PseudoLabel::kFake, PseudoLabel::kIgnore};
  EXPECT_NEAR(loss_unsupervised(y, one).value, std::log(2.0), 1e-15);

  Rng rng(9);
  std::vector<double> yy(50);
  std::vector<PseudoLabel> pl(50);
  double sum = 0.0;
  int accepted = 0;
  for (int i = 0; i < 50; ++i) {
    yy[i] = 0.01 + 0.98 * rng.uniform();
    pl[i] = static_cast<PseudoLabel>(rng.below(3));
    if (pl[i] == PseudoLabel::kIgnore) continue;
    sum += pl[i] == PseudoLabel::kFake ? -std::log(yy[i]) : -std::log(1.0 - yy[i]);
    ++accepted;
  }
  const auto got = loss_unsupervised(yy, pl);
  EXPECT_EQ(got.accepted, static_cast<std::size_t>(accepted));
  EXPECT_NEAR(got.value, sum / accepted, 1e-12);
}

TEST(Losses, TotalCombinesTheTerms) {
  const auto l = total_loss(0.4, 0.3, 0.2, 2.0);
  EXPECT_DOUBLE_EQ(l.total, 0.4 + 0.2 + 2.0 * 0.3);
  EXPECT_EQ(l.lambda, 2.0);
}

// ---------------------------------------------------------------------------

struct GradCase {
  Model model;
  TrainingBatch batch;
};

GradCase gradient_case(int d, int h, std::uint64_t seed) {
  Rng rng(seed);
  GradCase c;
  c.model = init_model({static_cast<std::size_t>(d), static_cast<std::size_t>(h), 0.5, 0.1, 1e-5},
                       seed);
  auto& m = c.model;
  for (Eigen::Index i = 0; i < m.adapter.a.size(); ++i) m.adapter.a.data()[i] += 0.3 * rng.normal();
  for (Eigen::Index i = 0; i < h; ++i) {
    m.head.gamma(i) = 0.5 + rng.uniform();
    m.head.beta(i) = 0.2 * rng.normal();
    m.head.running_mean(i) = 0.1 * rng.normal();
    m.head.running_var(i) = 0.01 + 0.05 * rng.uniform();
  }
  const int nl = 6, nu = 4;
  c.batch.images = random_unit_columns(rng, d, nl + nu);
  c.batch.texts = random_unit_columns(rng, d, nl + nu);
  for (int j = 0; j < nl + nu; ++j) {
    // Pull a few texts toward their image so clip scores spread out.
    if (j % 2 == 0) {
      c.batch.texts.col(j) = (c.batch.texts.col(j) + 2.0 * c.batch.images.col(j)).normalized();
    }
    c.batch.targets.push_back(static_cast<double>(rng.below(2)));
  }
  c.batch.n_labeled = nl;
  return c;
}

double objective(const Model& m, const TrainingBatch& b) {
  return forward_objective(m, b, 1.0, Mode::kEval, nullptr).loss.total;
}

TEST(Backward, MatchesCentralDifferences) {
  for (int d : {2, 8, 64}) {
    for (int h : {2, 16}) {
      auto c = gradient_case(d, h, 100 + d + h);
      const auto rec = forward_objective(c.model, c.batch, 1.0, Mode::kEval, nullptr);
      const Gradients g = backward(c.model, c.batch, rec);
      const auto g_blocks = param_blocks(g);
      auto p_blocks = param_blocks(c.model);

      Rng pick(d * 31 + h);
      for (int trial = 0; trial < 100; ++trial) {
        const auto b = static_cast<std::size_t>(pick.below(kNumParamBlocks));
        const auto i = static_cast<std::size_t>(pick.below(p_blocks[b].values.size()));
        double& p = p_blocks[b].values[i];
        const double saved = p;
        p = saved + 1e-5;
        const double up = objective(c.model, c.batch);
        p = saved - 1e-5;
        const double down = objective(c.model, c.batch);
        p = saved;
        const double fd = (up - down) / 2e-5;
        const double an = g_blocks[b].values[i];
        const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-6});
        EXPECT_LT(rel, 1e-4) << "d=" << d << " h=" << h << " block " << p_blocks[b].name << "["
                             << i << "] analytic " << an << " numeric " << fd;
      }
    }
  }
}

TEST(Backward, TrainModeBatchNormGradient) {
  // Train-mode statistics depend on the batch; with dropout off the forward
  // pass is still deterministic, so finite differences apply.
  auto c = gradient_case(6, 5, 17);
  c.model.head.dropout = 0.0;
  auto train_obj = [&](const Model& m) {
    return forward_objective(m, c.batch, 1.0, Mode::kTrain, nullptr).loss.total;
  };
  const auto rec = forward_objective(c.model, c.batch, 1.0, Mode::kTrain, nullptr);
  const Gradients g = backward(c.model, c.batch, rec);
  const auto g_blocks = param_blocks(g);
  auto p_blocks = param_blocks(c.model);
  for (std::size_t b = 0; b < kNumParamBlocks; ++b) {
    for (std::size_t i = 0; i < p_blocks[b].values.size(); ++i) {
      double& p = p_blocks[b].values[i];
      const double saved = p;
      p = saved + 1e-5;
      const double up = train_obj(c.model);
      p = saved - 1e-5;
      const double down = train_obj(c.model);
      p = saved;
      const double fd = (up - down) / 2e-5;
      const double an = g_blocks[b].values[i];
      EXPECT_LT(std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-6}), 1e-4)
          << p_blocks[b].name << "[" << i << "]";
    }
  }
}

TEST(Backward, ContrastiveTermReachesTheAdapter) {
  auto c = gradient_case(8, 4, 5);
  c.model.head.w2.setZero();  // no head path into A
  const auto rec = forward_objective(c.model, c.batch, 1.0, Mode::kEval, nullptr);
  EXPECT_GT(backward(c.model, c.batch, rec).a.norm(), 0.0);
  const auto rec0 = forward_objective(c.model, c.batch, 0.0, Mode::kEval, nullptr);
  EXPECT_EQ(backward(c.model, c.batch, rec0).a.norm(), 0.0);
}

TEST(Backward, NeedsARecordedForward) {
  auto c = gradient_case(2, 2, 1);
  EXPECT_THROW(backward(c.model, c.batch, ForwardRecord{}), Error);
}

// ---------------------------------------------------------------------------

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Model m = init_model({3, 2, 0.5, 0.1, 1e-5}, 1);
  const Model before = m;
  auto state = OptimizerState::for_model(m);
  adam_step(m, Gradients::zeros_like(m), state, 1e-3);
  EXPECT_EQ(state.step, 1);
  EXPECT_EQ(m.adapter.a, before.adapter.a);
  EXPECT_EQ(m.head.w1, before.head.w1);
  EXPECT_EQ(m.head.b2, before.head.b2);
}

TEST(Adam, FirstStepMovesBySignTimesLr) {
  Model m = init_model({2, 2, 0.5, 0.1, 1e-5}, 1);
  const double before = m.head.b2;
  auto state = OptimizerState::for_model(m);
  Gradients g = Gradients::zeros_like(m);
  g.b2 = -3.0;
  adam_step(m, g, state, 0.01);
  EXPECT_NEAR(m.head.b2 - before, 0.01, 1e-9);
}

TEST(Adam, AdapterScaleOnlyTouchesTheAdapter) {
  Model m = init_model({2, 2, 0.5, 0.1, 1e-5}, 1);
  const Model before = m;
  auto state = OptimizerState::for_model(m);
  Gradients g = Gradients::zeros_like(m);
  g.a.setConstant(1.0);
  g.b2 = 1.0;
  adam_step(m, g, state, 0.01, 0.1);
  EXPECT_NEAR(before.adapter.a(0, 0) - m.adapter.a(0, 0), 0.001, 1e-9);
  EXPECT_NEAR(before.head.b2 - m.head.b2, 0.01, 1e-9);
}

TEST(Adam, NonFiniteGradientNamesTheBlock) {
  Model m = init_model({2, 2, 0.5, 0.1, 1e-5}, 1);
  auto state = OptimizerState::for_model(m);
  Gradients g = Gradients::zeros_like(m);
  g.gamma(1) = NAN;
  try {
    adam_step(m, g, state, 0.01);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("gamma"), std::string::npos);
  }
  EXPECT_EQ(state.step, 0);
}

TEST(Adam, MatchesTextbookOnAQuadratic) {
  Model m = init_model({2, 3, 0.5, 0.1, 1e-5}, 4);
  auto blocks = param_blocks(m);
  std::vector<double> p;
  for (const auto& b : blocks) p.insert(p.end(), b.values.begin(), b.values.end());
  std::vector<double> target(p.size()), curv(p.size());
  Rng rng(3);
  for (std::size_t i = 0; i < p.size(); ++i) {
    target[i] = rng.normal();
    curv[i] = 0.5 + rng.uniform();
  }

  // Textbook Adam over the flattened vector.
  std::vector<double> ref = p, mom(p.size(), 0.0), vel(p.size(), 0.0);
  const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  auto state = OptimizerState::for_model(m, b1, b2, eps);
  for (int t = 1; t <= 10; ++t) {
    Gradients g = Gradients::zeros_like(m);
    auto gb = param_blocks(g);
    auto pb = param_blocks(m);
    std::size_t k = 0;
    for (std::size_t b = 0; b < kNumParamBlocks; ++b) {
      for (std::size_t i = 0; i < pb[b].values.size(); ++i, ++k) {
        gb[b].values[i] = 2.0 * curv[k] * (pb[b].values[i] - target[k]);
      }
    }
    adam_step(m, g, state, lr);
    for (std::size_t i = 0; i < ref.size(); ++i) {
      const double grad = 2.0 * curv[i] * (ref[i] - target[i]);
      mom[i] = b1 * mom[i] + (1 - b1) * grad;
      vel[i] = b2 * vel[i] + (1 - b2) * grad * grad;
      const double mh = mom[i] / (1 - std::pow(b1, t));
      const double vh = vel[i] / (1 - std::pow(b2, t));
      ref[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
  std::size_t k = 0;
  for (const auto& b : param_blocks(m)) {
    for (double v : b.values) EXPECT_NEAR(v, ref[k++], 1e-10);
  }
}

TEST(Adam, DecreasesAConvexObjective) {
  Model m = init_model({2, 2, 0.5, 0.1, 1e-5}, 2);
  auto f = [](const Model& mm) {
    double s = 0.0;
    for (const auto& b : param_blocks(mm))
      for (double v : b.values) s += (v - 0.25) * (v - 0.25);
    return s;
  };
  auto state = OptimizerState::for_model(m);
  const double before = f(m);
  Gradients g = Gradients::zeros_like(m);
  auto gb = param_blocks(g);
  const auto pb = param_blocks(std::as_const(m));
  for (std::size_t b = 0; b < kNumParamBlocks; ++b)
    for (std::size_t i = 0; i < pb[b].values.size(); ++i) gb[b].values[i] = 2 * (pb[b].values[i] - 0.25);
  adam_step(m, g, state, 1e-3);
  EXPECT_LT(f(m), before);
}

// ---------------------------------------------------------------------------

TEST(LrSchedule, ConstantThenCosine) {
  const ScheduleConfig cfg;
  EXPECT_EQ(lr_schedule(0, cfg), 5e-4);
  EXPECT_EQ(lr_schedule(19, cfg), 5e-4);
  EXPECT_NEAR(lr_schedule(39, cfg), 0.0, 1e-18);
  const double e29 = lr_schedule(29, cfg), e30 = lr_schedule(30, cfg);
  EXPECT_NEAR(e29, 0.5 * 5e-4 * (1 + std::cos(std::numbers::pi * 9 / 19)), 1e-18);
  EXPECT_NEAR(0.5 * (e29 + e30), 0.5 * 5e-4, 1e-15);
  for (int e = 20; e < 39; ++e) EXPECT_GT(lr_schedule(e, cfg), lr_schedule(e + 1, cfg));
}

TEST(LrSchedule, OutOfRangeIsAnError) {
  const ScheduleConfig cfg;
  EXPECT_THROW(lr_schedule(-1, cfg), Error);
  EXPECT_THROW(lr_schedule(40, cfg), Error);
}

TEST(LrSchedule, RespectsAFloor) {
  ScheduleConfig cfg;
  cfg.lr_min = 1e-5;
  EXPECT_NEAR(lr_schedule(39, cfg), 1e-5, 1e-18);
}

}  // namespace
}  // namespace covlm
