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

#include "experiment.hpp"

#include <fstream>
#include <initializer_list>
#include <memory>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>

namespace covlm::cli {
namespace {

using nlohmann::json;

void reject_unknown(const json& section, std::string_view where,
                    std::initializer_list<std::string_view> allowed) {
  if (!section.is_object()) throw ConfigError(std::string(where) + " must be a JSON object");
  for (const auto& [key, value] : section.items()) {
    bool known = false;
    for (auto a : allowed) known |= key == a;
    if (!known) throw ConfigError("unknown key \"" + key + "\" in " + std::string(where));
  }
}

double get_number(const json& section, const char* key, std::string_view where) {
  const auto& v = section.at(key);
  if (!v.is_number()) throw ConfigError(std::string(where) + "." + key + " must be a number");
  return v.get<double>();
}

std::int64_t get_integer(const json& section, const char* key, std::string_view where) {
  const auto& v = section.at(key);
  if (!v.is_number_integer()) {
    throw ConfigError(std::string(where) + "." + key + " must be an integer");
  }
  return v.get<std::int64_t>();
}

std::size_t get_count(const json& section, const char* key, std::string_view where) {
  const auto v = get_integer(section, key, where);
  if (v < 0) throw ConfigError(std::string(where) + "." + key + " must be >= 0");
  return static_cast<std::size_t>(v);
}

std::uint64_t get_u64(const json& v, std::string_view what) {
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
    throw ConfigError(std::string(what) + " must be a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

std::string get_string(const json& section, const char* key, std::string_view where) {
  const auto& v = section.at(key);
  if (!v.is_string()) throw ConfigError(std::string(where) + "." + key + " must be a string");
  return v.get<std::string>();
}

template <typename T, typename Fn>
void maybe(const json& section, const char* key, T& target, Fn&& read) {
  if (section.contains(key)) target = read(key);
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

SynthParams parse_synth(const json& s, std::uint64_t seed) {
  constexpr std::string_view where = "synth";
  reject_unknown(s, where,
                 {"n_real", "n_fake", "dim", "sigma_real", "sigma_fake", "sigma_gen", "seed"});
  SynthParams p;
  p.seed = seed;
  auto count = [&](const char* k) { return get_count(s, k, where); };
  auto number = [&](const char* k) { return get_number(s, k, where); };
  maybe(s, "n_real", p.n_real, count);
  maybe(s, "n_fake", p.n_fake, count);
  maybe(s, "dim", p.dim, count);
  maybe(s, "sigma_real", p.sigma_real, number);
  maybe(s, "sigma_fake", p.sigma_fake, number);
  maybe(s, "sigma_gen", p.sigma_gen, number);
  if (s.contains("seed")) p.seed = get_u64(s.at("seed"), "synth.seed");
  p.validate();
  return p;
}

ManifestOptions parse_split(const json& s) {
  constexpr std::string_view where = "split";
  reject_unknown(s, where, {"labeled_fraction", "val_fraction", "test_fraction"});
  ManifestOptions o;
  auto number = [&](const char* k) { return get_number(s, k, where); };
  maybe(s, "labeled_fraction", o.labeled_fraction, number);
  maybe(s, "val_fraction", o.val_fraction, number);
  maybe(s, "test_fraction", o.test_fraction, number);
  if (!(o.labeled_fraction > 0.0 && o.labeled_fraction < 1.0)) {
    throw ConfigError("split.labeled_fraction must lie in (0, 1)");
  }
  if (o.val_fraction < 0.0 || o.test_fraction < 0.0 || o.val_fraction + o.test_fraction >= 1.0) {
    throw ConfigError("split.val_fraction and split.test_fraction must be >= 0 with sum < 1");
  }
  return o;
}

TrainConfig parse_train(const json& s, std::uint64_t seed) {
  constexpr std::string_view where = "train";
  reject_unknown(s, where,
                 {"epochs", "batch_size", "lr0", "lr_min", "constant_lr_epochs", "warmup_epochs", "steps_per_epoch", "adapter_lr_scale",
                  "lambda", "threshold_refresh", "blip_score_mode", "hidden", "dropout",
                  "bn_momentum", "adam_beta1", "adam_beta2", "adam_eps", "checkpoint_every"});
  TrainConfig t;
  t.seed = seed;
  auto integer = [&](const char* k) { return static_cast<int>(get_integer(s, k, where)); };
  auto number = [&](const char* k) { return get_number(s, k, where); };
  maybe(s, "epochs", t.epochs, integer);
  maybe(s, "batch_size", t.batch_size, integer);
  maybe(s, "lr0", t.lr0, number);
  maybe(s, "lr_min", t.lr_min, number);
  maybe(s, "constant_lr_epochs", t.constant_lr_epochs, integer);
  maybe(s, "warmup_epochs", t.warmup_epochs, integer);
  maybe(s, "steps_per_epoch", t.steps_per_epoch, integer);
  maybe(s, "adapter_lr_scale", t.adapter_lr_scale, number);
  maybe(s, "lambda", t.lambda, number);
  if (s.contains("threshold_refresh")) {
    t.threshold_refresh = parse_threshold_refresh(get_string(s, "threshold_refresh", where));
  }
  if (s.contains("blip_score_mode")) {
    t.blip_score_mode = parse_blip_score_mode(get_string(s, "blip_score_mode", where));
  }
  maybe(s, "hidden", t.hidden, [&](const char* k) { return get_count(s, k, where); });
  maybe(s, "dropout", t.dropout, number);
  maybe(s, "bn_momentum", t.bn_momentum, number);
  maybe(s, "adam_beta1", t.adam_beta1, number);
  maybe(s, "adam_beta2", t.adam_beta2, number);
  maybe(s, "adam_eps", t.adam_eps, number);
  maybe(s, "checkpoint_every", t.checkpoint_every, integer);
  t.validate();
  return t;
}

BaselinePolicy parse_policy(const json& s) {
  constexpr std::string_view where = "policy";
  reject_unknown(s, where, {"kind", "fixed_tau", "ema_decay", "target_class_ratio"});
  BaselinePolicy p;
  if (s.contains("kind")) p.kind = parse_policy_kind(get_string(s, "kind", where));
  auto number = [&](const char* k) { return get_number(s, k, where); };
  maybe(s, "fixed_tau", p.fixed_tau, number);
  maybe(s, "ema_decay", p.ema_decay, number);
  if (s.contains("target_class_ratio") && !s.at("target_class_ratio").is_null()) {
    p.target_class_ratio = get_number(s, "target_class_ratio", where);
  }
  p.validate();
  return p;
}

}  // namespace

ExperimentConfig parse_experiment(const json& doc, const std::filesystem::path& base_dir,
                                  std::optional<std::uint64_t> seed_override) {
  reject_unknown(doc, "config",
                 {"seed", "synth", "split", "data", "imbalance", "unlabeled_multiplier", "train",
                  "policy", "sweep", "inputs"});
  ExperimentConfig c;
  c.raw = doc;
  if (doc.contains("seed")) c.seed = get_u64(doc.at("seed"), "seed");
  if (seed_override) c.seed = *seed_override;

  if (doc.contains("synth")) c.synth = parse_synth(doc.at("synth"), c.seed);
  if (doc.contains("split")) c.split = parse_split(doc.at("split"));
  if (doc.contains("data")) {
    const auto& d = doc.at("data");
    reject_unknown(d, "data", {"store", "manifest"});
    if (!d.contains("store")) throw ConfigError("data.store is required");
    DataPaths paths;
    paths.store = resolve(base_dir, get_string(d, "store", "data"));
    if (d.contains("manifest")) paths.manifest = resolve(base_dir, get_string(d, "manifest", "data"));
    c.data = paths;
  }
  if (c.data && c.synth) throw ConfigError("config: \"data\" and \"synth\" are mutually exclusive");
  if (doc.contains("imbalance")) {
    const auto& s = doc.at("imbalance");
    reject_unknown(s, "imbalance", {"ratio"});
    const auto& r = s.at("ratio");
    if (!r.is_array() || r.size() != 2) {
      throw ConfigError("imbalance.ratio must be a [real, fake] pair");
    }
    const auto real = get_u64(r.at(0), "imbalance.ratio[0]");
    const auto fake = get_u64(r.at(1), "imbalance.ratio[1]");
    if (real == 0 || fake == 0 || real > UINT32_MAX || fake > UINT32_MAX) {
      throw ConfigError("imbalance.ratio terms must be positive 32-bit integers");
    }
    c.imbalance = ClassRatio{static_cast<std::uint32_t>(real), static_cast<std::uint32_t>(fake)};
  }
  if (doc.contains("unlabeled_multiplier")) {
    const auto& v = doc.at("unlabeled_multiplier");
    if (!v.is_number() || v.get<double>() < 0.0) {
      throw ConfigError("unlabeled_multiplier must be a non-negative number");
    }
    c.unlabeled_multiplier = v.get<double>();
  }
  c.train = parse_train(doc.value("train", json::object()), c.seed);
  if (doc.contains("policy")) c.policy = parse_policy(doc.at("policy"));
  if (doc.contains("sweep")) {
    const auto& s = doc.at("sweep");
    reject_unknown(s, "sweep", {"multipliers"});
    const auto& m = s.at("multipliers");
    if (!m.is_array() || m.empty()) throw ConfigError("sweep.multipliers must be a non-empty array");
    c.sweep_multipliers.clear();
    for (const auto& v : m) {
      if (!v.is_number() || v.get<double>() < 0.0) {
        throw ConfigError("sweep.multipliers entries must be non-negative numbers");
      }
      c.sweep_multipliers.push_back(v.get<double>());
    }
  }
  if (doc.contains("inputs")) {
    const auto& in = doc.at("inputs");
    if (!in.is_array()) throw ConfigError("inputs must be an array of paths");
    for (const auto& v : in) {
      if (!v.is_string()) throw ConfigError("inputs entries must be strings");
      c.inputs.push_back(resolve(base_dir, v.get<std::string>()));
    }
  }
  return c;
}

ExperimentConfig load_experiment(const std::filesystem::path& path,
                                 std::optional<std::uint64_t> seed_override) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_experiment(doc, path.parent_path(), seed_override);
}

std::pair<std::vector<EmbeddingRecord>, SplitManifest> materialize(const ExperimentConfig& config) {
  if (config.data) {
    auto store = read_store(config.data->store);
    if (config.data->manifest.empty()) {
      if (!config.split) throw ConfigError("data.manifest or a split section is required");
      auto manifest = build_manifest(store.records, *config.split, config.seed);
      return {std::move(store.records), std::move(manifest)};
    }
    auto manifest = read_manifest(config.data->manifest);
    return {std::move(store.records), std::move(manifest)};
  }
  if (!config.synth) throw ConfigError("config needs either a data or a synth section");
  if (!config.split) throw ConfigError("a synth section needs a split section");
  auto records = generate(*config.synth);
  auto manifest = build_manifest(records, *config.split, config.seed);
  return {std::move(records), std::move(manifest)};
}

std::unique_ptr<const PreparedData> prepare_data(const ExperimentConfig& config,
                                                 std::optional<double> multiplier) {
  auto owned = std::make_unique<PreparedData>();
  PreparedData& out = *owned;
  std::tie(out.records, out.manifest) = materialize(config);
  validate_manifest(out.manifest, out.records);

  if (config.imbalance) {
    std::unordered_map<std::uint64_t, Label> labels;
    for (const auto& r : out.records) labels.emplace(r.sample_id, r.label);
    auto resample = [&](const std::vector<std::uint64_t>& ids, std::uint64_t seed) {
      std::vector<LabeledId> pool;
      pool.reserve(ids.size());
      for (auto id : ids) pool.push_back({id, labels.at(id)});
      return apply_imbalance(pool, *config.imbalance, seed);
    };
    out.manifest.train_labeled = resample(out.manifest.train_labeled, config.seed);
    out.manifest.train_unlabeled = resample(out.manifest.train_unlabeled, config.seed + 1);
  }

  const auto mult = multiplier ? multiplier : config.unlabeled_multiplier;
  if (mult) {
    out.manifest.train_unlabeled = subsample_unlabeled(
        out.manifest.train_unlabeled, *mult, out.manifest.train_labeled.size(), config.seed);
  }

  out.table = EmbeddingTable::from_records(out.records);
  out.data = TrainingData::from_manifest(out.table, out.manifest);
  return owned;
}

}  // namespace covlm::cli
