#include "safact/config.hpp"
#include "safact/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace safact;

int main(int argc, char** argv) {
  CLI::App app{"safact: sample, self-evaluate, and preference-align a reference policy"};
  app.require_subcommand(1);

  std::string config_path;
  std::string workdir_override;
  std::string prompts_path;
  std::string snapshot_path;
  long long seed_override = -1;
  bool force_mock = false;

  app.add_option("--config", config_path, "run configuration (JSON)")->required();
  app.add_option("--workdir", workdir_override, "override paths.workdir");
  app.add_option("--seed", seed_override, "override sample.seed");
  app.add_flag("--mock", force_mock, "require the mock backend (refuse HTTP)");

  auto* sample = app.add_subcommand("sample", "generate candidate responses");
  sample->add_option("--prompts", prompts_path, "prompts JSONL")->required();
  auto* score = app.add_subcommand("score", "score responses with Self-Eval p(True)");
  score->add_option("--prompts", prompts_path, "prompts JSONL")->required();
  score->add_option("--snapshot", snapshot_path, "scorer snapshot (default: base)");
  auto* build_prefs = app.add_subcommand("build-prefs", "construct preference pairs");
  build_prefs->add_option("--prompts", prompts_path, "prompts JSONL")->required();
  auto* train_dpo = app.add_subcommand("train-dpo", "DPO against the frozen base snapshot");
  train_dpo->add_option("--prompts", prompts_path, "prompts JSONL")->required();
  auto* build_sk = app.add_subcommand("build-sk", "build SK-Tuning prediction pairs");
  build_sk->add_option("--prompts", prompts_path, "prompts JSONL")->required();
  auto* train_sk = app.add_subcommand("train-sk", "train the self-evaluator on SK data");
  auto* eval = app.add_subcommand("eval", "run the evaluation battery");
  eval->add_option("--prompts", prompts_path, "prompts JSONL")->required();
  eval->add_option("--snapshot", snapshot_path, "snapshot to evaluate (default: base)");
  auto* report = app.add_subcommand("report", "print report.json");

  CLI11_PARSE(app, argc, argv);

  try {
    config::RunConfig cfg = config::load_config(config_path);
    if (!workdir_override.empty()) cfg.paths.workdir = workdir_override;
    if (seed_override >= 0) cfg.sample.seed = uint64_t(seed_override);
    if (force_mock && cfg.backend.mock_fixtures.empty()) {
      std::cerr << "error: --mock given but backend.mock_fixtures is unset\n";
      return 2;
    }

    if (sample->parsed()) pipeline::cmd_sample(cfg, prompts_path);
    if (score->parsed()) pipeline::cmd_score(cfg, prompts_path, snapshot_path);
    if (build_prefs->parsed()) pipeline::cmd_build_prefs(cfg, prompts_path);
    if (train_dpo->parsed()) pipeline::cmd_train_dpo(cfg, prompts_path);
    if (build_sk->parsed()) pipeline::cmd_build_sk(cfg, prompts_path);
    if (train_sk->parsed()) pipeline::cmd_train_sk(cfg);
    if (eval->parsed()) pipeline::cmd_eval(cfg, prompts_path, snapshot_path);
    if (report->parsed()) pipeline::cmd_report(cfg);
    return 0;
  } catch (const pipeline::UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const config::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
