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

#ifndef COVLM_RNG_HPP_
#define COVLM_RNG_HPP_

#include <array>
#include <cstdint>
#include <span>
#include <utility>

namespace covlm {

// One step of the splitmix64 generator; advances `state`.
std::uint64_t splitmix64(std::uint64_t& state);

// xoshiro256** seeded through splitmix64. Every sampling routine below is
// defined in terms of next() only, so a given seed reproduces the same
// stream on any platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  // Independent stream for a named purpose (data order, dropout, ...).
  static Rng stream(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t next();

  // Uniform on [0, 1) with 53 random bits.
  double uniform();

  // Uniform integer in [0, bound); rejection sampling, no modulo bias.
  std::uint64_t below(std::uint64_t bound);

  // Standard normal via Box-Muller (cosine branch only, no caching).
  double normal();

  // Fisher-Yates, walking from the back.
  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::array<std::uint64_t, 4> s_{};
};

// Stream identifiers used by the engine.
namespace streams {
inline constexpr std::uint64_t kSynth = 0x5359'4e54;       // "SYNT"
inline constexpr std::uint64_t kManifest = 0x4d41'4e49;    // "MANI"
inline constexpr std::uint64_t kImbalance = 0x494d'4241;   // "IMBA"
inline constexpr std::uint64_t kSubsample = 0x5355'4253;   // "SUBS"
inline constexpr std::uint64_t kInit = 0x494e'4954;        // "INIT"
inline constexpr std::uint64_t kLabeled = 0x4c41'4245;     // "LABE"
inline constexpr std::uint64_t kUnlabeled = 0x554e'4c42;   // "UNLB"
inline constexpr std::uint64_t kDropout = 0x4452'4f50;     // "DROP"
}  // namespace streams

}  // namespace covlm

#endif  // COVLM_RNG_HPP_
