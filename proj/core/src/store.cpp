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

#include "covlm/store.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <unordered_map>
#include <unordered_set>

#include "covlm/rng.hpp"

namespace covlm {
namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_floats(std::vector<std::uint8_t>& out, std::span<const float> values, std::size_t dim) {
  if (values.empty()) {
    out.insert(out.end(), 4 * dim, std::uint8_t{0});
    return;
  }
  for (float f : values) put_u32(out, std::bit_cast<std::uint32_t>(f));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t{p[i]} << (8 * i);
  return v;
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{p[i]} << (8 * i);
  return v;
}

std::vector<float> get_floats(const std::uint8_t* p, std::size_t dim) {
  std::vector<float> v(dim);
  for (std::size_t i = 0; i < dim; ++i) v[i] = std::bit_cast<float>(get_u32(p + 4 * i));
  return v;
}

bool valid_label(std::int8_t raw) { return raw == 0 || raw == 1 || raw == -1; }

double l2_norm(std::span<const float> v) {
  double sum = 0.0;
  for (float x : v) sum += double{x} * double{x};
  return std::sqrt(sum);
}

std::vector<std::uint64_t> json_ids(const nlohmann::json& doc, const char* key) {
  if (!doc.contains(key)) throw Error(std::string("manifest: missing key \"") + key + "\"");
  const auto& arr = doc.at(key);
  if (!arr.is_array()) throw Error(std::string("manifest: \"") + key + "\" is not an array");
  std::vector<std::uint64_t> ids;
  ids.reserve(arr.size());
  for (const auto& v : arr) {
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
      throw Error(std::string("manifest: \"") + key + "\" holds a non-id value");
    }
    ids.push_back(v.get<std::uint64_t>());
  }
  return ids;
}

}  // namespace

const char* to_string(Label label) {
  switch (label) {
    case Label::kReal:
      return "Real";
    case Label::kFake:
      return "Fake";
    case Label::kUnlabeled:
      return "Unlabeled";
  }
  return "?";
}

std::vector<std::uint8_t> serialize_store(std::span<const EmbeddingRecord> records,
                                          std::uint32_t dim) {
  if (dim == 0) {
    if (records.empty()) {
      throw StoreError(StoreErrc::kDimensionMismatch, "store: empty store needs an explicit dimension");
    }
    dim = static_cast<std::uint32_t>(records.front().image_emb.size());
  }
  if (dim == 0) throw StoreError(StoreErrc::kDimensionMismatch, "store: dimension must be >= 1");

  const bool has_gen = !records.empty() && !records.front().gen_text_emb.empty();
  std::unordered_set<std::uint64_t> seen;
  seen.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    const std::size_t gen_expected = has_gen ? dim : 0;
    if (r.image_emb.size() != dim || r.text_emb.size() != dim ||
        r.gen_text_emb.size() != gen_expected) {
      throw StoreError(StoreErrc::kDimensionMismatch,
                       "store: record " + std::to_string(i) + " (id " + std::to_string(r.sample_id) +
                           ") does not match dimension " + std::to_string(dim));
    }
    if (!seen.insert(r.sample_id).second) {
      throw StoreError(StoreErrc::kDuplicateId,
                       "store: duplicate sample_id " + std::to_string(r.sample_id));
    }
  }

  StoreHeader header;
  header.dim = dim;
  header.record_count = records.size();
  header.flags = has_gen ? kFlagGeneratedCaptions : 0;

  std::vector<std::uint8_t> out;
  out.reserve(kStoreHeaderBytes + records.size() * header.record_bytes());
  out.insert(out.end(), std::begin(kStoreMagic), std::end(kStoreMagic));
  put_u32(out, header.version);
  put_u32(out, header.dim);
  put_u64(out, header.record_count);
  put_u32(out, header.flags);
  for (const auto& r : records) {
    put_u64(out, r.sample_id);
    out.push_back(static_cast<std::uint8_t>(static_cast<std::int8_t>(r.label)));
    out.insert(out.end(), 7, std::uint8_t{0});
    put_floats(out, r.image_emb, dim);
    put_floats(out, r.text_emb, dim);
    put_floats(out, r.gen_text_emb, dim);
  }
  return out;
}

std::uint64_t write_store(std::span<const EmbeddingRecord> records,
                          const std::filesystem::path& path, std::uint32_t dim) {
  const auto bytes = serialize_store(records, dim);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StoreError(StoreErrc::kIo, "store: cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  out.close();
  if (!out) throw StoreError(StoreErrc::kIo, "store: write to " + path.string() + " failed");
  return bytes.size();
}

Store parse_store(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kStoreHeaderBytes) {
    throw StoreError(StoreErrc::kTruncated,
                     "store: truncated header at byte offset " + std::to_string(bytes.size()) +
                         " (header is 24 bytes)");
  }
  if (std::memcmp(bytes.data(), kStoreMagic, 4) != 0) {
    throw StoreError(StoreErrc::kBadMagic, "store: bad magic (expected \"CVLM\")");
  }
  Store store;
  auto& h = store.header;
  h.version = get_u32(bytes.data() + 4);
  if (h.version != kStoreVersion) {
    throw StoreError(StoreErrc::kUnsupportedVersion,
                     "store: unsupported version " + std::to_string(h.version));
  }
  h.dim = get_u32(bytes.data() + 8);
  h.record_count = get_u64(bytes.data() + 12);
  h.flags = get_u32(bytes.data() + 20);
  if (h.dim == 0 && h.record_count > 0) {
    throw StoreError(StoreErrc::kDimensionMismatch, "store: zero dimension with records present");
  }

  const std::size_t rec = h.record_bytes();
  const std::size_t available = bytes.size() - kStoreHeaderBytes;
  const std::size_t complete = available / rec;
  if (complete < h.record_count) {
    const std::size_t offset = kStoreHeaderBytes + complete * rec;
    throw StoreError(StoreErrc::kTruncated,
                     "store: truncated at byte offset " + std::to_string(offset) + ": record " +
                         std::to_string(complete) + " of " + std::to_string(h.record_count) +
                         " is incomplete (file is " + std::to_string(bytes.size()) + " bytes)");
  }
  if (available != h.record_count * rec) {
    throw StoreError(StoreErrc::kRecordCountMismatch,
                     "store: header declares " + std::to_string(h.record_count) +
                         " records but the file holds " + std::to_string(available) +
                         " bytes of record data");
  }

  const bool has_gen = h.has_generated_captions();
  std::unordered_set<std::uint64_t> seen;
  seen.reserve(h.record_count);
  store.records.reserve(h.record_count);
  const std::uint8_t* p = bytes.data() + kStoreHeaderBytes;
  for (std::uint64_t i = 0; i < h.record_count; ++i, p += rec) {
    const std::size_t offset = static_cast<std::size_t>(p - bytes.data());
    EmbeddingRecord r;
    r.sample_id = get_u64(p);
    const auto raw_label = static_cast<std::int8_t>(p[8]);
    if (!valid_label(raw_label)) {
      throw StoreError(StoreErrc::kInvalidLabel, "store: invalid label byte " +
                                                     std::to_string(raw_label) + " at byte offset " +
                                                     std::to_string(offset + 8));
    }
    r.label = static_cast<Label>(raw_label);
    for (int k = 9; k < 16; ++k) {
      if (p[k] != 0) {
        throw StoreError(StoreErrc::kInvalidPadding,
                         "store: nonzero padding at byte offset " + std::to_string(offset + k));
      }
    }
    if (!seen.insert(r.sample_id).second) {
      throw StoreError(StoreErrc::kDuplicateId,
                       "store: duplicate sample_id " + std::to_string(r.sample_id));
    }
    r.image_emb = get_floats(p + 16, h.dim);
    r.text_emb = get_floats(p + 16 + 4 * h.dim, h.dim);
    if (has_gen) r.gen_text_emb = get_floats(p + 16 + 8 * h.dim, h.dim);
    store.records.push_back(std::move(r));
  }
  return store;
}

Store read_store(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StoreError(StoreErrc::kIo, "store: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw StoreError(StoreErrc::kIo, "store: read of " + path.string() + " failed");
  return parse_store(bytes);
}

void normalize_embeddings(std::span<EmbeddingRecord> records) {
  auto normalize = [](std::vector<float>& v, std::uint64_t id) {
    if (v.empty()) return;
    const double norm = l2_norm(v);
    if (!std::isfinite(norm) || norm < 1e-12) {
      throw StoreError(StoreErrc::kNotNormalized,
                       "store: sample " + std::to_string(id) + " has a zero or non-finite vector");
    }
    for (float& x : v) x = static_cast<float>(double{x} / norm);
  };
  for (auto& r : records) {
    normalize(r.image_emb, r.sample_id);
    normalize(r.text_emb, r.sample_id);
    normalize(r.gen_text_emb, r.sample_id);
  }
}

void check_unit_norm(std::span<const EmbeddingRecord> records, double tolerance) {
  auto check = [tolerance](std::span<const float> v, std::uint64_t id, const char* which) {
    if (v.empty()) return;
    for (float x : v) {
      if (!std::isfinite(x)) {
        throw StoreError(StoreErrc::kNonFinite,
                         "store: sample " + std::to_string(id) + " " + which + " is not finite");
      }
    }
    const double norm = l2_norm(v);
    if (std::abs(norm - 1.0) > tolerance) {
      throw StoreError(StoreErrc::kNotNormalized, "store: sample " + std::to_string(id) + " " +
                                                      which + " has norm " + std::to_string(norm));
    }
  };
  for (const auto& r : records) {
    check(r.image_emb, r.sample_id, "image_emb");
    check(r.text_emb, r.sample_id, "text_emb");
    check(r.gen_text_emb, r.sample_id, "gen_text_emb");
  }
}

// ---------------------------------------------------------------------------

nlohmann::json manifest_to_json(const SplitManifest& manifest) {
  return nlohmann::json{{"train_labeled", manifest.train_labeled},
                        {"train_unlabeled", manifest.train_unlabeled},
                        {"val", manifest.val},
                        {"test", manifest.test}};
}

SplitManifest manifest_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw Error("manifest: document is not a JSON object");
  for (const auto& [key, value] : doc.items()) {
    if (key != "train_labeled" && key != "train_unlabeled" && key != "val" && key != "test") {
      throw Error("manifest: unknown key \"" + key + "\"");
    }
  }
  SplitManifest m;
  m.train_labeled = json_ids(doc, "train_labeled");
  m.train_unlabeled = json_ids(doc, "train_unlabeled");
  m.val = json_ids(doc, "val");
  m.test = json_ids(doc, "test");
  return m;
}

void write_manifest(const SplitManifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("manifest: cannot open " + path.string() + " for writing");
  out << manifest_to_json(manifest).dump() << '\n';
  if (!out) throw Error("manifest: write to " + path.string() + " failed");
}

SplitManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("manifest: cannot open " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("manifest: " + path.string() + " is not valid JSON: " + e.what());
  }
  return manifest_from_json(doc);
}

void validate_manifest(const SplitManifest& manifest, std::span<const EmbeddingRecord> records) {
  std::unordered_map<std::uint64_t, Label> labels;
  labels.reserve(records.size());
  for (const auto& r : records) labels.emplace(r.sample_id, r.label);

  std::unordered_map<std::uint64_t, const char*> owner;
  auto visit = [&](const std::vector<std::uint64_t>& ids, const char* name, bool needs_label) {
    for (auto id : ids) {
      auto it = labels.find(id);
      if (it == labels.end()) {
        throw Error(std::string("manifest: ") + name + " id " + std::to_string(id) +
                    " is not in the store");
      }
      if (needs_label && it->second == Label::kUnlabeled) {
        throw Error(std::string("manifest: ") + name + " id " + std::to_string(id) +
                    " has no label");
      }
      auto [pos, inserted] = owner.emplace(id, name);
      if (!inserted) {
        throw Error("manifest: id " + std::to_string(id) + " appears in both " + pos->second +
                    " and " + name);
      }
    }
  };
  visit(manifest.train_labeled, "train_labeled", true);
  visit(manifest.train_unlabeled, "train_unlabeled", false);
  visit(manifest.val, "val", true);
  visit(manifest.test, "test", true);

  bool real = false;
  bool fake = false;
  for (auto id : manifest.train_labeled) {
    real |= labels[id] == Label::kReal;
    fake |= labels[id] == Label::kFake;
  }
  if (!real || !fake) {
    throw Error("manifest: train_labeled needs at least one Real and one Fake sample");
  }
}

SplitManifest build_manifest(std::span<const EmbeddingRecord> records,
                             const ManifestOptions& options, std::uint64_t seed) {
  auto in_open_unit = [](double f) { return f > 0.0 && f < 1.0; };
  if (!in_open_unit(options.labeled_fraction)) {
    throw ConfigError("manifest: labeled_fraction must lie in (0, 1)");
  }
  if (options.val_fraction < 0.0 || options.test_fraction < 0.0 ||
      options.val_fraction + options.test_fraction >= 1.0) {
    throw ConfigError("manifest: val_fraction and test_fraction must be >= 0 with sum < 1");
  }

  // Positions in store order, per class.
  std::vector<std::size_t> by_class[2];
  std::vector<std::size_t> unlabeled_positions;
  for (std::size_t i = 0; i < records.size(); ++i) {
    switch (records[i].label) {
      case Label::kReal:
        by_class[0].push_back(i);
        break;
      case Label::kFake:
        by_class[1].push_back(i);
        break;
      case Label::kUnlabeled:
        unlabeled_positions.push_back(i);
        break;
    }
  }
  for (int c = 0; c < 2; ++c) {
    if (by_class[c].size() < 2) {
      throw Error(std::string("manifest: need at least 2 labeled ") + (c == 0 ? "Real" : "Fake") +
                  " records, found " + std::to_string(by_class[c].size()));
    }
  }

  Rng rng = Rng::stream(seed, streams::kManifest);
  std::vector<std::size_t> labeled, unlabeled = unlabeled_positions, val, test;
  for (auto& positions : by_class) {
    rng.shuffle(std::span(positions));
    const auto n = static_cast<double>(positions.size());
    const auto n_test = static_cast<std::size_t>(std::llround(options.test_fraction * n));
    const auto n_val = static_cast<std::size_t>(std::llround(options.val_fraction * n));
    std::size_t cursor = 0;
    test.insert(test.end(), positions.begin(), positions.begin() + n_test);
    cursor += n_test;
    val.insert(val.end(), positions.begin() + cursor, positions.begin() + cursor + n_val);
    cursor += n_val;
    const std::size_t pool = positions.size() - cursor;
    if (pool == 0) throw Error("manifest: val/test fractions leave an empty training pool");
    auto n_labeled = static_cast<std::size_t>(
        std::llround(options.labeled_fraction * static_cast<double>(pool)));
    n_labeled = std::clamp<std::size_t>(n_labeled, 1, pool);
    labeled.insert(labeled.end(), positions.begin() + cursor,
                   positions.begin() + cursor + n_labeled);
    unlabeled.insert(unlabeled.end(), positions.begin() + cursor + n_labeled, positions.end());
  }

  auto to_ids = [&](std::vector<std::size_t>& positions) {
    std::sort(positions.begin(), positions.end());
    std::vector<std::uint64_t> ids;
    ids.reserve(positions.size());
    for (auto p : positions) ids.push_back(records[p].sample_id);
    return ids;
  };
  SplitManifest m;
  m.train_labeled = to_ids(labeled);
  m.train_unlabeled = to_ids(unlabeled);
  m.val = to_ids(val);
  m.test = to_ids(test);
  return m;
}

std::vector<std::uint64_t> apply_imbalance(std::span<const LabeledId> pool, ClassRatio ratio,
                                           std::uint64_t seed) {
  if (ratio.real == 0 || ratio.fake == 0) {
    throw ConfigError("imbalance: ratio terms must be positive integers");
  }
  std::vector<std::uint64_t> real, fake;
  for (const auto& item : pool) {
    if (item.label == Label::kReal) {
      real.push_back(item.sample_id);
    } else if (item.label == Label::kFake) {
      fake.push_back(item.sample_id);
    } else {
      throw Error("imbalance: id " + std::to_string(item.sample_id) + " has no ground truth");
    }
  }
  const std::size_t k = std::min(real.size() / ratio.real, fake.size() / ratio.fake);
  if (k == 0) {
    throw Error("imbalance: cannot realize " + std::to_string(ratio.real) + ":" +
                std::to_string(ratio.fake) + " from " + std::to_string(real.size()) + " Real and " +
                std::to_string(fake.size()) + " Fake samples");
  }
  Rng rng = Rng::stream(seed, streams::kImbalance);
  rng.shuffle(std::span(real));
  rng.shuffle(std::span(fake));
  std::vector<std::uint64_t> out(real.begin(), real.begin() + k * ratio.real);
  out.insert(out.end(), fake.begin(), fake.begin() + k * ratio.fake);
  rng.shuffle(std::span(out));
  return out;
}

std::vector<std::uint64_t> subsample_unlabeled(std::span<const std::uint64_t> unlabeled,
                                               double multiplier, std::size_t n_labeled,
                                               std::uint64_t seed) {
  if (!std::isfinite(multiplier) || multiplier < 0.0) {
    throw ConfigError("subsample: multiplier must be a non-negative number");
  }
  const auto wanted = static_cast<std::size_t>(
      std::llround(multiplier * static_cast<double>(n_labeled)));
  if (wanted > unlabeled.size()) {
    throw Error("subsample: requested " + std::to_string(wanted) + " unlabeled ids but the pool has " +
                std::to_string(unlabeled.size()));
  }
  std::vector<std::uint64_t> ids(unlabeled.begin(), unlabeled.end());
  Rng rng = Rng::stream(seed, streams::kSubsample);
  rng.shuffle(std::span(ids));
  ids.resize(wanted);
  return ids;
}

}  // namespace covlm
