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

#ifndef COVLM_STORE_HPP_
#define COVLM_STORE_HPP_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "covlm/error.hpp"

namespace covlm {

// On-disk values of the label byte.
enum class Label : std::int8_t { kReal = 0, kFake = 1, kUnlabeled = -1 };

const char* to_string(Label label);

// One dual-encoder sample. Vectors are stored as binary32 and are expected
// to be unit norm; gen_text_emb may be empty when no captioner output exists.
struct EmbeddingRecord {
  std::uint64_t sample_id = 0;
  Label label = Label::kUnlabeled;
  std::vector<float> image_emb;
  std::vector<float> text_emb;
  std::vector<float> gen_text_emb;

  bool operator==(const EmbeddingRecord&) const = default;
};

inline constexpr char kStoreMagic[4] = {'C', 'V', 'L', 'M'};
inline constexpr std::uint32_t kStoreVersion = 1;
inline constexpr std::uint32_t kFlagGeneratedCaptions = 1u << 0;
inline constexpr std::size_t kStoreHeaderBytes = 24;
inline constexpr std::size_t kRecordPrefixBytes = 16;

struct StoreHeader {
  std::uint32_t version = kStoreVersion;
  std::uint32_t dim = 0;
  std::uint64_t record_count = 0;
  std::uint32_t flags = 0;

  bool has_generated_captions() const { return (flags & kFlagGeneratedCaptions) != 0; }
  // Size of one record in bytes for this header's dimension.
  std::size_t record_bytes() const { return kRecordPrefixBytes + 3 * 4 * std::size_t{dim}; }
};

enum class StoreErrc {
  kIo,
  kBadMagic,
  kUnsupportedVersion,
  kTruncated,
  kRecordCountMismatch,
  kDimensionMismatch,
  kDuplicateId,
  kInvalidLabel,
  kInvalidPadding,
  kNonFinite,
  kNotNormalized,
};

class StoreError : public Error {
 public:
  StoreError(StoreErrc code, const std::string& what) : Error(what), code_(code) {}
  StoreErrc code() const { return code_; }

 private:
  StoreErrc code_;
};

struct Store {
  StoreHeader header;
  std::vector<EmbeddingRecord> records;
};

// Writes header + records in input order. Values are written bit-for-bit;
// call normalize_embeddings() first when ingesting raw encoder output.
// Returns the number of bytes written (equal to the file size). `dim` may be
// left at 0 to take the dimension from the records; an empty store needs it.
std::uint64_t write_store(std::span<const EmbeddingRecord> records,
                          const std::filesystem::path& path, std::uint32_t dim = 0);

// The exact bytes write_store would produce.
std::vector<std::uint8_t> serialize_store(std::span<const EmbeddingRecord> records,
                                          std::uint32_t dim = 0);

// Reads a store written by write_store (or any conforming producer).
Store read_store(const std::filesystem::path& path);

// Same as read_store over an in-memory image of the file.
Store parse_store(std::span<const std::uint8_t> bytes);

// L2-normalizes every non-empty vector in place. Throws StoreError
// (kNotNormalized) for a zero or non-finite vector.
void normalize_embeddings(std::span<EmbeddingRecord> records);

// Checks every non-empty vector against ||v|| = 1 within `tolerance`.
void check_unit_norm(std::span<const EmbeddingRecord> records, double tolerance);

// ---------------------------------------------------------------------------
// Split manifests

struct SplitManifest {
  std::vector<std::uint64_t> train_labeled;
  std::vector<std::uint64_t> train_unlabeled;
  std::vector<std::uint64_t> val;
  std::vector<std::uint64_t> test;

  bool operator==(const SplitManifest&) const = default;
};

nlohmann::json manifest_to_json(const SplitManifest& manifest);
SplitManifest manifest_from_json(const nlohmann::json& doc);
void write_manifest(const SplitManifest& manifest, const std::filesystem::path& path);
SplitManifest read_manifest(const std::filesystem::path& path);

// Disjointness, id existence, labeled-ness of train_labeled/val/test, and at
// least one Real and one Fake in train_labeled. Throws Error on violation.
void validate_manifest(const SplitManifest& manifest, std::span<const EmbeddingRecord> records);

struct ManifestOptions {
  double labeled_fraction = 0.05;
  double val_fraction = 0.0;
  double test_fraction = 0.0;
};

// Stratified split. Per class, val and test are carved out first (rounded to
// nearest), then labeled_fraction of the remaining training pool goes to
// train_labeled (rounded to nearest, at least 1) and the rest to
// train_unlabeled. Records stored without a label always land in
// train_unlabeled. Lists follow store order.
SplitManifest build_manifest(std::span<const EmbeddingRecord> records,
                             const ManifestOptions& options, std::uint64_t seed);

// An id with its ground truth, as consumed by the resampling helpers.
struct LabeledId {
  std::uint64_t sample_id;
  Label label;
};

struct ClassRatio {
  std::uint32_t real = 1;
  std::uint32_t fake = 1;
};

// Largest subset whose Real:Fake counts are exactly k*ratio.real : k*ratio.fake.
// Output order is shuffled.
std::vector<std::uint64_t> apply_imbalance(std::span<const LabeledId> pool, ClassRatio ratio,
                                           std::uint64_t seed);

// Exactly round(multiplier * n_labeled) ids drawn without replacement. The
// draw is a prefix of one seeded permutation, so larger multipliers with the
// same seed return supersets.
std::vector<std::uint64_t> subsample_unlabeled(std::span<const std::uint64_t> unlabeled,
                                               double multiplier, std::size_t n_labeled,
                                               std::uint64_t seed);

}  // namespace covlm

#endif  // COVLM_STORE_HPP_
