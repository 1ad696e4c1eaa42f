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

#include "cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <future>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "covlm/baselines.hpp"
#include "covlm/checkpoint.hpp"
#include "covlm/error.hpp"
#include "experiment.hpp"

namespace covlm::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  bool parallel = false;
  std::vector<std::string> inputs;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw Error("failed writing " + path.string());
}

void write_json(const fs::path& path, const json& doc) { write_text(path, doc.dump(2) + "\n"); }

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  std::replace(s.begin(), s.end(), '\r', ' ');
  return s;
}

std::string number(const json& v) { return v.is_null() ? "" : v.dump(); }

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

std::string to_csv(const std::vector<std::string>& header,
                   const std::vector<std::vector<std::string>>& rows) {
  std::ostringstream os;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << csv_field(cells[i]);
    os << "\n";
  };
  line(header);
  for (const auto& r : rows) line(r);
  return os.str();
}

const std::vector<std::string> kSummaryHeader = {
    "source",   "run",           "method",
    "epochs",   "test_accuracy", "test_balanced_accuracy",
    "best_val_epoch", "best_val_test_accuracy"};

std::vector<std::string> summary_row(const json& run, const std::string& source,
                                     const std::string& name) {
  const auto& fin = run.at("final");
  const json& test = fin.at("test");
  const json& best = run.at("best_val");
  return {source,
          name,
          run.at("method").get<std::string>(),
          std::to_string(run.at("history").size()),
          test.is_null() ? "" : number(test.at("accuracy")),
          test.is_null() ? "" : number(test.at("balanced_accuracy")),
          best.is_null() ? "" : number(best.at("epoch")),
          best.is_null() || best.at("test").is_null() ? "" : number(best.at("test").at("accuracy"))};
}

class RunLog {
 public:
  void add(const std::string& name, const json& report) {
    for (const auto& w : report.at("warmup")) {
      json line = {{"run", name}, {"type", "warmup"}};
      line.update(w);
      lines_ << line.dump() << "\n";
    }
    for (const auto& e : report.at("history")) {
      json line = {{"run", name}, {"type", "epoch"}};
      line.update(e);
      lines_ << line.dump() << "\n";
    }
    json fin = {{"run", name},
                {"type", "final"},
                {"method", report.at("method")},
                {"final", report.at("final")},
                {"best_val", report.at("best_val")}};
    lines_ << fin.dump() << "\n";
  }
  std::string str() const { return lines_.str(); }

 private:
  std::ostringstream lines_;
};

void warn_degenerate(const json& report, const std::string& name, std::ostream& err) {
  const auto& th = report.at("thresholds_history");
  for (std::size_t e = 0; e < th.size(); ++e) {
    if (th[e].is_object() && th[e].value("degenerate", false)) {
      err << "covlm: warning: " << name << ": degenerate thresholds at epoch " << e
          << " (class means do not separate)\n";
      return;
    }
  }
}

FitResult fit_policy(const BaselinePolicy& policy, TrainConfig config, const TrainingData& data,
                     const fs::path& run_dir) {
  if (config.checkpoint_every > 0) {
    config.checkpoint_dir = run_dir / "checkpoints";
    fs::create_directories(config.checkpoint_dir);
  }
  return run_baseline(policy, config, data);
}

json base_report(const char* command, const ExperimentConfig& cfg) {
  return {{"command", command}, {"seed", cfg.seed}, {"config", cfg.raw}};
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_synth(const ExperimentConfig& cfg, const fs::path& out) {
  if (!cfg.synth || !cfg.split) throw ConfigError("synth needs synth and split sections");
  auto [records, manifest] = materialize(cfg);
  const auto store_path = out / "store.cvlm";
  const auto bytes = write_store(records, store_path, cfg.synth->dim);
  write_manifest(manifest, out / "manifest.json");
  json report = base_report("synth", cfg);
  report["store"] = {{"file", "store.cvlm"}, {"bytes", bytes}, {"records", records.size()},
                     {"dim", cfg.synth->dim}};
  report["manifest"] = {{"file", "manifest.json"},
                        {"train_labeled", manifest.train_labeled.size()},
                        {"train_unlabeled", manifest.train_unlabeled.size()},
                        {"val", manifest.val.size()},
                        {"test", manifest.test.size()}};
  report["difficulty"] = to_json(difficulty_stats(records));
  write_json(out / "report.json", report);
  return kExitOk;
}

int cmd_ingest(const ExperimentConfig& cfg, const fs::path& out, std::ostream& os) {
  if (!cfg.data) throw ConfigError("ingest needs a data section");
  const auto store = read_store(cfg.data->store);
  check_unit_norm(store.records, 1e-4);
  json report = base_report("ingest", cfg);
  report["store"] = {{"records", store.records.size()},
                     {"dim", store.header.dim},
                     {"generated_captions", (store.header.flags & 1u) != 0}};
  if (!cfg.data->manifest.empty()) {
    const auto manifest = read_manifest(cfg.data->manifest);
    validate_manifest(manifest, store.records);
    report["manifest"] = {{"train_labeled", manifest.train_labeled.size()},
                          {"train_unlabeled", manifest.train_unlabeled.size()},
                          {"val", manifest.val.size()},
                          {"test", manifest.test.size()}};
  }
  if (store.header.flags & 1u) {
    try {
      report["difficulty"] = to_json(difficulty_stats(store.records));
    } catch (const Error&) {
      report["difficulty"] = nullptr;  // a class is absent
    }
  }
  write_json(out / "report.json", report);
  os << "ingested " << store.records.size() << " records (dim " << store.header.dim << ")\n";
  return kExitOk;
}

int cmd_train(const ExperimentConfig& cfg, const fs::path& out, bool baseline,
              std::ostream& os, std::ostream& err) {
  BaselinePolicy policy;
  if (baseline) {
    if (!cfg.policy) throw ConfigError("baseline needs a policy section");
    policy = *cfg.policy;
  } else if (cfg.policy && cfg.policy->kind != PolicyKind::kCovlm) {
    throw ConfigError("train runs the covlm policy; use the baseline subcommand for others");
  }
  const auto prepared = prepare_data(cfg, std::nullopt);
  auto fit = fit_policy(policy, cfg.train, prepared->data, out);
  const std::string name(to_string(policy.kind));
  warn_degenerate(fit.report, name, err);

  save_checkpoint(out / "model.ckpt", fit.model, fit.optimizer, cfg.train.to_json());
  RunLog log;
  log.add(name, fit.report);
  write_text(out / "metrics.jsonl", log.str());
  json report = base_report(baseline ? "baseline" : "train", cfg);
  report["run"] = fit.report;
  write_json(out / "report.json", report);
  write_text(out / "summary.csv", to_csv(kSummaryHeader, summary_rows(report, "report.json")));
  os << name << " test accuracy " << number(fit.report["final"]["test"].value("accuracy", json()))
     << "\n";
  return kExitOk;
}

int cmd_ablate(const ExperimentConfig& cfg, const fs::path& out, std::ostream& os,
               std::ostream& err) {
  if (cfg.train.lambda <= 0.0) throw ConfigError("ablate needs train.lambda > 0");
  const auto prepared = prepare_data(cfg, std::nullopt);
  struct Row {
    const char* terms;
    PolicyKind kind;
    double lambda;
  };
  const Row rows[] = {{"ce_l", PolicyKind::kSupOnly, 0.0},
                      {"ce_l+cc_l", PolicyKind::kSupOnly, cfg.train.lambda},
                      {"ce_l+cc_l+ce_ul", PolicyKind::kCovlm, cfg.train.lambda}};
  json report = base_report("ablate", cfg);
  report["rows"] = json::array();
  RunLog log;
  std::vector<std::vector<std::string>> csv;
  for (std::size_t i = 0; i < std::size(rows); ++i) {
    BaselinePolicy policy;
    policy.kind = rows[i].kind;
    TrainConfig tc = cfg.train;
    tc.lambda = rows[i].lambda;
    const auto dir = out / ("row" + std::to_string(i + 1));
    auto fit = fit_policy(policy, tc, prepared->data, dir);
    const std::string name = "row" + std::to_string(i + 1);
    warn_degenerate(fit.report, name, err);
    log.add(name, fit.report);
    report["rows"].push_back({{"row", i + 1}, {"terms", rows[i].terms}, {"run", fit.report}});
    const auto& test = fit.report["final"]["test"];
    csv.push_back({std::to_string(i + 1), rows[i].terms, fit.report["method"].get<std::string>(),
                   number(json(rows[i].lambda)), number(test.value("accuracy", json())),
                   number(test.value("balanced_accuracy", json()))});
    os << name << " (" << rows[i].terms << ") test accuracy " << csv.back()[4] << "\n";
  }
  write_text(out / "metrics.jsonl", log.str());
  write_json(out / "report.json", report);
  write_text(out / "summary.csv",
             to_csv({"row", "terms", "method", "lambda", "test_accuracy", "test_balanced_accuracy"},
                    csv));
  return kExitOk;
}

int cmd_sweep(const ExperimentConfig& cfg, const fs::path& out, bool parallel, std::ostream& os,
              std::ostream& err) {
  BaselinePolicy policy;
  if (cfg.policy) policy = *cfg.policy;
  const auto& mults = cfg.sweep_multipliers;

  struct Point {
    std::size_t n_unlabeled = 0;
    FitResult fit;
  };
  auto run_point = [&](double m) {
    const auto prepared = prepare_data(cfg, m);
    Point p;
    p.n_unlabeled = prepared->data.unlabeled.size();
    p.fit = run_baseline(policy, cfg.train, prepared->data);
    return p;
  };
  std::vector<Point> points;
  if (parallel) {
    std::vector<std::future<Point>> jobs;
    for (double m : mults) jobs.push_back(std::async(std::launch::async, run_point, m));
    for (auto& j : jobs) points.push_back(j.get());
  } else {
    for (double m : mults) points.push_back(run_point(m));
  }

  json report = base_report("sweep-unlabeled", cfg);
  report["points"] = json::array();
  RunLog log;
  std::vector<std::vector<std::string>> csv;
  for (std::size_t i = 0; i < mults.size(); ++i) {
    const std::string name = "x" + number(json(mults[i]));
    const auto& r = points[i].fit.report;
    warn_degenerate(r, name, err);
    log.add(name, r);
    report["points"].push_back(
        {{"multiplier", mults[i]}, {"unlabeled", points[i].n_unlabeled}, {"run", r}});
    const auto& test = r["final"]["test"];
    csv.push_back({number(json(mults[i])), std::to_string(points[i].n_unlabeled),
                   number(test.value("accuracy", json())),
                   number(test.value("balanced_accuracy", json()))});
    os << name << " (" << points[i].n_unlabeled << " unlabeled) test accuracy " << csv.back()[2]
       << "\n";
  }
  write_text(out / "metrics.jsonl", log.str());
  write_json(out / "report.json", report);
  write_text(out / "summary.csv",
             to_csv({"multiplier", "n_unlabeled", "test_accuracy", "test_balanced_accuracy"}, csv));
  return kExitOk;
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(path.string() + " is not valid JSON: " + e.what());
  }
}

int cmd_report(const std::vector<fs::path>& inputs, const fs::path& out, std::ostream& os) {
  if (inputs.empty()) throw ConfigError("report needs at least one input (--input or inputs)");
  std::vector<std::vector<std::string>> rows;
  for (const auto& in : inputs) {
    const auto file = fs::is_directory(in) ? in / "report.json" : in;
    auto part = summary_rows(read_json_file(file), file.string());
    rows.insert(rows.end(), part.begin(), part.end());
  }
  const auto csv = to_csv(kSummaryHeader, rows);
  write_text(out / "summary.csv", csv);
  os << csv;
  return kExitOk;
}

}  // namespace

std::vector<std::vector<std::string>> summary_rows(const json& report, const std::string& source) {
  std::vector<std::vector<std::string>> rows;
  const auto command = report.value("command", std::string());
  if (command == "train" || command == "baseline") {
    const auto& run = report.at("run");
    rows.push_back(summary_row(run, source, run.at("method").get<std::string>()));
  } else if (command == "ablate") {
    for (const auto& r : report.at("rows")) {
      rows.push_back(summary_row(r.at("run"), source, "row" + r.at("row").dump()));
    }
  } else if (command == "sweep-unlabeled") {
    for (const auto& p : report.at("points")) {
      rows.push_back(summary_row(p.at("run"), source, "x" + p.at("multiplier").dump()));
    }
  } else {
    throw Error(source + ": not a run report (command \"" + command + "\")");
  }
  return rows;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Consensus pseudo-labeling engine for AI-generated image detection", "covlm"};
  app.require_subcommand(1);
  Options opt;

  auto add_common = [&](CLI::App* sub, bool config_required) {
    auto* c = sub->add_option("-c,--config", opt.config, "Experiment config (JSON)");
    if (config_required) c->required();
    sub->add_option("-s,--seed", opt.seed, "Override the config seed");
    sub->add_option("-o,--out", opt.out, "Output directory")->capture_default_str();
    return sub;
  };
  add_common(app.add_subcommand("synth", "Generate a synthetic store and manifest"), true);
  add_common(app.add_subcommand("ingest", "Validate an embedding store and manifest"), true);
  add_common(app.add_subcommand("train", "Train with consensus pseudo-labels"), true);
  add_common(app.add_subcommand("baseline", "Train with a baseline labeling policy"), true);
  add_common(app.add_subcommand("ablate", "Loss-term ablation"), true);
  auto* sweep = add_common(app.add_subcommand("sweep-unlabeled", "Vary the unlabeled pool"), true);
  sweep->add_flag("--parallel", opt.parallel, "Run sweep points concurrently");
  auto* report = add_common(app.add_subcommand("report", "Summarize run reports as CSV"), false);
  report->add_option("-i,--input", opt.inputs, "Run directory or report.json (repeatable)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "covlm: error: usage: " << one_line(e.what()) << "\n";
    return kExitConfig;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    const fs::path out_dir(opt.out);
    if (command == "report") {
      std::vector<fs::path> inputs(opt.inputs.begin(), opt.inputs.end());
      if (!opt.config.empty()) {
        const auto cfg = load_experiment(opt.config, opt.seed);
        inputs.insert(inputs.end(), cfg.inputs.begin(), cfg.inputs.end());
      }
      fs::create_directories(out_dir);
      return cmd_report(inputs, out_dir, out);
    }
    const auto cfg = load_experiment(opt.config, opt.seed);
    fs::create_directories(out_dir);
    if (command == "synth") return cmd_synth(cfg, out_dir);
    if (command == "ingest") return cmd_ingest(cfg, out_dir, out);
    if (command == "train") return cmd_train(cfg, out_dir, false, out, err);
    if (command == "baseline") return cmd_train(cfg, out_dir, true, out, err);
    if (command == "ablate") return cmd_ablate(cfg, out_dir, out, err);
    return cmd_sweep(cfg, out_dir, opt.parallel, out, err);
  } catch (const ConfigError& e) {
    err << "covlm: error: config: " << one_line(e.what()) << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "covlm: error: " << one_line(e.what()) << "\n";
    return kExitRuntime;
  }
}

}  // namespace covlm::cli
