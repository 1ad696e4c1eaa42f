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

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

namespace covlm {
namespace {

constexpr char kMagic[8] = {'C', 'V', 'L', 'M', 'C', 'K', 'P', 'T'};

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{p[i]} << (8 * i);
  return v;
}

void put_block(std::vector<std::uint8_t>& out, std::span<const double> values) {
  for (double x : values) put_u64(out, std::bit_cast<std::uint64_t>(x));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void read_block(std::span<double> values, std::string_view name) {
    const std::size_t need = 8 * values.size();
    if (pos_ + need > bytes_.size()) {
      throw Error("checkpoint: truncated in block \"" + std::string(name) + "\"");
    }
    for (auto& x : values) {
      x = std::bit_cast<double>(get_u64(bytes_.data() + pos_));
      pos_ += 8;
    }
  }

  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::span<double> view(Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }
std::span<const double> view(const Vector& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const OptimizerState& optimizer, const nlohmann::json& hyperparameters) {
  const auto& h = model.head;
  nlohmann::json header = {
      {"format", "covlm-checkpoint"},
      {"version", 1},
      {"layout", "column-major"},
      {"dim", model.dim()},
      {"hidden", model.hidden()},
      {"dropout", h.dropout},
      {"bn_momentum", h.bn_momentum},
      {"bn_eps", h.bn_eps},
      {"step", optimizer.step},
      {"adam", {{"beta1", optimizer.beta1}, {"beta2", optimizer.beta2}, {"eps", optimizer.eps}}},
      {"hyperparameters", hyperparameters},
  };
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  const auto blocks = param_blocks(model);
  for (std::size_t b = 0; b < kNumParamBlocks; ++b) {
    put_block(out, blocks[b].values);
    if (blocks[b].name == "beta") {
      put_block(out, view(h.running_mean));
      put_block(out, view(h.running_var));
    }
  }
  for (const auto& block : param_blocks(optimizer.m)) put_block(out, block.values);
  for (const auto& block : param_blocks(optimizer.v)) put_block(out, block.values);

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw Error("checkpoint: cannot open " + path.string() + " for writing");
  file.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!file) throw Error("checkpoint: write to " + path.string() + " failed");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw Error("checkpoint: cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(file)),
                                        std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw Error("checkpoint: bad magic in " + path.string());
  }
  const std::uint64_t header_len = get_u64(bytes.data() + 8);
  if (16 + header_len > bytes.size()) throw Error("checkpoint: truncated header");

  Checkpoint ckpt;
  try {
    ckpt.header = nlohmann::json::parse(bytes.begin() + 16,
                                        bytes.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("checkpoint: malformed header: ") + e.what());
  }
  if (ckpt.header.value("version", 0) != 1) throw Error("checkpoint: unsupported version");

  ModelConfig cfg;
  cfg.dim = ckpt.header.at("dim").get<std::size_t>();
  cfg.hidden = ckpt.header.at("hidden").get<std::size_t>();
  cfg.dropout = ckpt.header.at("dropout").get<double>();
  cfg.bn_momentum = ckpt.header.at("bn_momentum").get<double>();
  cfg.bn_eps = ckpt.header.at("bn_eps").get<double>();
  ckpt.model = init_model(cfg, 0);
  const auto& adam = ckpt.header.at("adam");
  ckpt.optimizer = OptimizerState::for_model(ckpt.model, adam.at("beta1").get<double>(),
                                             adam.at("beta2").get<double>(),
                                             adam.at("eps").get<double>());
  ckpt.optimizer.step = ckpt.header.at("step").get<std::int64_t>();

  Reader reader(std::span<const std::uint8_t>(bytes).subspan(16 + header_len));
  auto& h = ckpt.model.head;
  for (auto& block : param_blocks(ckpt.model)) {
    reader.read_block(block.values, block.name);
    if (block.name == "beta") {
      reader.read_block(view(h.running_mean), "running_mean");
      reader.read_block(view(h.running_var), "running_var");
    }
  }
  for (auto& block : param_blocks(ckpt.optimizer.m)) reader.read_block(block.values, block.name);
  for (auto& block : param_blocks(ckpt.optimizer.v)) reader.read_block(block.values, block.name);
  if (!reader.at_end()) throw Error("checkpoint: trailing bytes after the last block");
  return ckpt;
}

}  // namespace covlm
