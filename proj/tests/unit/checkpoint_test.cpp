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

#include "covlm/checkpoint.hpp"

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "covlm/error.hpp"

namespace covlm {
namespace {

namespace fs = std::filesystem;

class CheckpointTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("covlm_ckpt_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::vector<char> slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
  }
  void dump(const fs::path& p, const std::vector<char>& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }

  fs::path dir_;
};

// A model and optimizer state where every entry is distinct.
void scramble(Model& m, OptimizerState& s, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& b : param_blocks(m))
    for (double& v : b.values) v = rng.normal();
  m.head.running_mean = Vector::NullaryExpr(m.head.running_mean.size(), [&] { return rng.normal(); });
  m.head.running_var = Vector::NullaryExpr(m.head.running_var.size(), [&] { return rng.uniform(); });
  for (auto& b : param_blocks(s.m))
    for (double& v : b.values) v = rng.normal();
  for (auto& b : param_blocks(s.v))
    for (double& v : b.values) v = rng.uniform();
  s.step = 17;
}

TEST_F(CheckpointTest, RoundTripIsBitExact) {
  Model m = init_model({5, 3, 0.25, 0.2, 1e-4}, 1);
  auto s = OptimizerState::for_model(m, 0.8, 0.99, 1e-6);
  scramble(m, s, 2);
  const fs::path path = dir_ / "m.ckpt";
  save_checkpoint(path, m, s, {{"lambda", 0.5}});

  const Checkpoint c = load_checkpoint(path);
  EXPECT_EQ(c.model.adapter.a, m.adapter.a);
  EXPECT_EQ(c.model.head.w1, m.head.w1);
  EXPECT_EQ(c.model.head.b1, m.head.b1);
  EXPECT_EQ(c.model.head.gamma, m.head.gamma);
  EXPECT_EQ(c.model.head.beta, m.head.beta);
  EXPECT_EQ(c.model.head.running_mean, m.head.running_mean);
  EXPECT_EQ(c.model.head.running_var, m.head.running_var);
  EXPECT_EQ(c.model.head.w2, m.head.w2);
  EXPECT_EQ(c.model.head.b2, m.head.b2);
  EXPECT_EQ(c.model.head.dropout, 0.25);
  EXPECT_EQ(c.model.head.bn_momentum, 0.2);
  EXPECT_EQ(c.model.head.bn_eps, 1e-4);

  EXPECT_EQ(c.optimizer.step, 17);
  EXPECT_EQ(c.optimizer.beta1, 0.8);
  EXPECT_EQ(c.optimizer.beta2, 0.99);
  EXPECT_EQ(c.optimizer.eps, 1e-6);
  EXPECT_EQ(c.optimizer.m.w1, s.m.w1);
  EXPECT_EQ(c.optimizer.v.a, s.v.a);
  EXPECT_EQ(c.optimizer.v.b2, s.v.b2);
  EXPECT_EQ(c.header.at("hyperparameters").at("lambda"), 0.5);

  // Saving what was loaded reproduces the file byte for byte.
  save_checkpoint(dir_ / "again.ckpt", c.model, c.optimizer, {{"lambda", 0.5}});
  EXPECT_EQ(slurp(path), slurp(dir_ / "again.ckpt"));
}

TEST_F(CheckpointTest, LoadedModelPredictsTheSame) {
  Model m = init_model({4, 6, 0.5, 0.1, 1e-5}, 9);
  auto s = OptimizerState::for_model(m);
  scramble(m, s, 3);
  save_checkpoint(dir_ / "m.ckpt", m, s, nlohmann::json::object());
  const Model back = load_checkpoint(dir_ / "m.ckpt").model;
  const Vector img = Vector::Ones(4).normalized(), txt = Vector::LinSpaced(4, -1, 1).normalized();
  EXPECT_EQ(predict(m, img, txt), predict(back, img, txt));
}

TEST_F(CheckpointTest, RejectsCorruptFiles) {
  Model m = init_model({3, 2, 0.5, 0.1, 1e-5}, 1);
  save_checkpoint(dir_ / "m.ckpt", m, OptimizerState::for_model(m), nlohmann::json::object());
  const auto good = slurp(dir_ / "m.ckpt");

  auto bad_magic = good;
  bad_magic[0] = 'X';
  dump(dir_ / "bad.ckpt", bad_magic);
  EXPECT_THROW(load_checkpoint(dir_ / "bad.ckpt"), Error);

  auto truncated = good;
  truncated.resize(good.size() - 8);
  dump(dir_ / "short.ckpt", truncated);
  try {
    load_checkpoint(dir_ / "short.ckpt");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
  }

  auto trailing = good;
  trailing.push_back(0);
  dump(dir_ / "long.ckpt", trailing);
  EXPECT_THROW(load_checkpoint(dir_ / "long.ckpt"), Error);

  EXPECT_THROW(load_checkpoint(dir_ / "missing.ckpt"), Error);
}

}  // namespace
}  // namespace covlm
