/* Copyright 2026 The moelora Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Command-line front end: train, eval, diagnose, gradcheck, aggregate,
// generate and config. Every failure prints one "error: ..." line and
// exits nonzero.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "moelora/checkpoint.hpp"
#include "moelora/config.hpp"
#include "moelora/dataio.hpp"
#include "moelora/diagnostics.hpp"
#include "moelora/errors.hpp"
#include "moelora/random.hpp"
#include "moelora/trainer.hpp"

namespace fs = std::filesystem;
using namespace moelora;

namespace {

constexpr int kExitError = 1;
constexpr int kExitAborted = 3;
constexpr int kExitCheckFailed = 4;
constexpr std::uint64_t kProbeStream = 104;

void write_manifest(const fs::path& dir, const std::string& command, const ExperimentConfig& cfg,
                    const nlohmann::ordered_json& extra = {}) {
  nlohmann::ordered_json m;
  m["command"] = command;
  m["version"] = MOELORA_VERSION;
  m["config_hash"] = config_hash(cfg);
  m["seed"] = cfg.seed;
  m["config"] = nlohmann::ordered_json::parse(config_to_json(cfg));
  for (const auto& [k, v] : extra.items()) m[k] = v;
  write_text_file((dir / "manifest.json").string(), m.dump(2) + "\n");
}

int run_train(const std::string& config_path, const std::string& out_dir, const std::string& resume,
              std::int64_t stop_at) {
  fs::create_directories(out_dir);
  std::optional<RestoredRun> restored;
  ExperimentConfig cfg;
  if (!resume.empty()) {
    restored.emplace(restore_checkpoint(load_checkpoint(resume)));
    cfg = restored->config;
    if (!config_path.empty() && config_hash(load_config(config_path)) != config_hash(cfg)) {
      throw ConfigError("config does not match the checkpoint being resumed");
    }
  } else {
    cfg = load_config(config_path);
  }
  const auto corpus = generate_synthetic_corpus(cfg.corpus, cfg.seed);
  MoeLoraModel model = restored ? std::move(restored->model) : MoeLoraModel(cfg.model, cfg.moe, cfg.contrastive);
  TrainState state = restored ? std::move(restored->state) : initial_train_state(model);
  const std::int64_t start = state.step;

  const fs::path dir(out_dir);
  std::string metrics;
  auto outcome = train(model, corpus, cfg, std::move(state),
                       stop_at > 0 ? std::optional<std::int64_t>(stop_at) : std::nullopt,
                       [&](const StepMetrics& m) { metrics += metrics_json_line(m) + "\n"; });
  write_text_file((dir / "metrics.jsonl").string(), metrics);
  save_checkpoint((dir / "checkpoint.bin").string(), outcome.checkpoint);

  nlohmann::ordered_json extra;
  extra["start_step"] = start;
  extra["end_step"] = outcome.checkpoint.get("train.step").i64.at(0);
  if (!resume.empty()) extra["resumed_from"] = resume;
  if (outcome.abort_reason) extra["abort_reason"] = *outcome.abort_reason;
  write_manifest(dir, "train", cfg, extra);

  if (outcome.abort_reason) {
    std::cerr << "error: training aborted: " << *outcome.abort_reason << " (last good state saved)\n";
    return kExitAborted;
  }
  if (!outcome.metrics.empty()) {
    const auto& last = outcome.metrics.back();
    std::printf("step %lld lm %.6f total %.6f conf %.6f\n", static_cast<long long>(last.step), last.loss.lm,
                last.loss.total, last.conf_mean);
  }
  return 0;
}

int run_eval(const std::string& ckpt, const std::string& probes_path) {
  auto run = restore_checkpoint(load_checkpoint(ckpt));
  const auto probes = parse_probes(read_text_file(probes_path));
  const auto r = toy_mc_eval(run.model, probes);
  nlohmann::ordered_json j;
  j["accuracy"] = r.accuracy;
  j["correct"] = r.correct;
  j["evaluated"] = r.evaluated;
  j["skipped"] = r.skipped;
  std::cout << j.dump() << "\n";
  return 0;
}

int run_diagnose(const std::string& ckpt, const std::string& data_path) {
  auto run = restore_checkpoint(load_checkpoint(ckpt));
  const auto samples = parse_samples(read_text_file(data_path));
  const int num_tasks = run.config.corpus.num_tasks;
  const auto prof = profile_routing(run.model, samples, num_tasks);
  nlohmann::ordered_json j;
  j["token_count"] = prof.confidence.token_count;
  j["global_conf"] = prof.confidence.global_conf;
  nlohmann::ordered_json layers = nlohmann::ordered_json::array();
  for (size_t l = 0; l < prof.confidence.per_layer_conf.size(); ++l) {
    nlohmann::ordered_json rec;
    rec["layer"] = l;
    rec["depth"] = static_cast<double>(l + 1) / static_cast<double>(prof.confidence.per_layer_conf.size());
    rec["conf"] = prof.confidence.per_layer_conf[l];
    rec["tokens"] = prof.confidence.per_layer_tokens[l];
    rec["p_bar"] = prof.utilization[l];
    layers.push_back(rec);
  }
  j["layers"] = layers;
  j["task_expert_nmi"] = prof.task_expert_nmi;
  j["task_expert_counts"] = prof.task_expert_counts;
  std::cout << j.dump(2) << "\n";
  return 0;
}

int run_gradcheck(const std::string& config_path, double tolerance) {
  const ExperimentConfig cfg = config_path.empty() ? gradcheck_config() : load_config(config_path);
  const auto r = objective_gradcheck(cfg);
  std::printf("max relative error %.3e over %lld coordinates (%lld skipped at kinks)\n", r.max_relative_error,
              static_cast<long long>(r.coordinates), static_cast<long long>(r.skipped_nonsmooth));
  if (!(r.max_relative_error < tolerance)) {
    std::cerr << "error: gradient check failed: " << r.max_relative_error << " >= " << tolerance << "\n";
    return kExitCheckFailed;
  }
  return 0;
}

int run_aggregate(const std::string& scores_path) {
  const auto scores = parse_scores(read_text_file(scores_path));
  std::printf("%.2f\n", weighted_average(scores));
  return 0;
}

int run_generate(const std::string& config_path, const std::string& out_dir, int num_probes) {
  const ExperimentConfig cfg = load_config(config_path);
  const auto corpus = generate_synthetic_corpus(cfg.corpus, cfg.seed);
  const fs::path dir(out_dir);
  fs::create_directories(dir);
  write_text_file((dir / "train.jsonl").string(), samples_to_jsonl(corpus.train));
  write_text_file((dir / "heldout.jsonl").string(), samples_to_jsonl(corpus.heldout));
  const auto probes = generate_probes(corpus, num_probes, hash_key({cfg.seed, kProbeStream}));
  write_text_file((dir / "probes.jsonl").string(), probes_to_jsonl(probes));
  nlohmann::ordered_json extra;
  extra["num_probes"] = num_probes;
  write_manifest(dir, "generate", cfg, extra);
  return 0;
}

int run_config(const std::string& config_path) {
  const ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
  cfg.validate();
  std::cout << nlohmann::ordered_json::parse(config_to_json(cfg)).dump(2) << "\n";
  std::cerr << "config_hash " << config_hash(cfg) << "\n";
  return 0;
}

std::string one_line(std::string s) {
  for (auto& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"moelora: LoRA mixture-of-experts with expert-contrastive training"};
  app.require_subcommand(1);

  std::string config_path, out_dir, ckpt, probes_path, data_path, scores_path, resume;
  std::int64_t stop_at = 0;
  int num_probes = 1000;
  double tolerance = 1e-4;

  auto* train_cmd = app.add_subcommand("train", "train on the synthetic corpus");
  train_cmd->add_option("--config", config_path, "config file");
  train_cmd->add_option("--out", out_dir, "output directory")->required();
  train_cmd->add_option("--resume", resume, "checkpoint to resume from");
  train_cmd->add_option("--stop-at", stop_at, "stop after this step (0: run to the end)");

  auto* eval_cmd = app.add_subcommand("eval", "multiple-choice probe accuracy");
  eval_cmd->add_option("--ckpt", ckpt, "checkpoint")->required();
  eval_cmd->add_option("--probes", probes_path, "probe file")->required();

  auto* diag_cmd = app.add_subcommand("diagnose", "routing confidence and utilization per layer");
  diag_cmd->add_option("--ckpt", ckpt, "checkpoint")->required();
  diag_cmd->add_option("--data", data_path, "sample file")->required();

  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference check of the joint objective");
  gc_cmd->add_option("--config", config_path, "config file (default: built-in tiny model)");
  gc_cmd->add_option("--tolerance", tolerance, "maximum relative error");

  auto* agg_cmd = app.add_subcommand("aggregate", "count-weighted average accuracy");
  agg_cmd->add_option("--scores", scores_path, "scores file")->required();

  auto* gen_cmd = app.add_subcommand("generate", "write the synthetic corpus and probes as JSONL");
  gen_cmd->add_option("--config", config_path, "config file")->required();
  gen_cmd->add_option("--out", out_dir, "output directory")->required();
  gen_cmd->add_option("--probes", num_probes, "number of probes");

  auto* cfg_cmd = app.add_subcommand("config", "print the canonical form of a config (default: built-in)");
  cfg_cmd->add_option("--config", config_path, "config file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return kExitError;
  }

  try {
    if (*train_cmd) {
      if (config_path.empty() && resume.empty()) throw InputError("train needs --config or --resume");
      return run_train(config_path, out_dir, resume, stop_at);
    }
    if (*eval_cmd) return run_eval(ckpt, probes_path);
    if (*diag_cmd) return run_diagnose(ckpt, data_path);
    if (*gc_cmd) return run_gradcheck(config_path, tolerance);
    if (*agg_cmd) return run_aggregate(scores_path);
    if (*cfg_cmd) return run_config(config_path);
    if (*gen_cmd) return run_generate(config_path, out_dir, num_probes);
  } catch (const std::exception& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return kExitError;
  }
  return kExitError;
}
