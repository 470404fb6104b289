#pragma once

#include "safact/config.hpp"
#include "safact/corpus.hpp"
#include "safact/policy.hpp"

#include <map>
#include <memory>
#include <string>
#include <vector>

// Subcommand implementations shared by the CLI and the test suites. Each
// command is a thin, logged composition over module operations; every run
// writes a manifest (input hashes + config hash) next to its main artifact.

namespace safact::pipeline {

// Caller mistakes: missing input files, invalid config. Exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// Everything else surfaces as exit code 1.
struct PipelineError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Resolved artifact locations for one run.
struct Workspace {
  explicit Workspace(const config::RunConfig& config);
  std::string workdir;
  std::string snapshots_dir;
  std::string samples_path() const { return workdir + "/samples.jsonl"; }
  std::string scores_path() const { return workdir + "/scores.jsonl"; }
  std::string claims_path() const { return workdir + "/claims.jsonl"; }
  std::string prefs_path() const { return workdir + "/prefs.jsonl"; }
  std::string skdata_path() const { return workdir + "/skdata.jsonl"; }
  std::string report_path() const { return workdir + "/report.json"; }
  std::string verdicts_path() const { return workdir + "/verdicts.jsonl"; }
  std::string base_snapshot_path() const { return snapshots_dir + "/policy.snap"; }
  std::string dpo_snapshot_path() const { return snapshots_dir + "/policy_dpo.snap"; }
  std::string sk_snapshot_path() const { return snapshots_dir + "/policy_skt.snap"; }
};

// Loads the base policy snapshot, creating a deterministic seeded one (biased
// toward printable ASCII so sampled text stays valid JSON) when none exists.
policy::PolicySnapshot ensure_base_snapshot(const config::RunConfig& config,
                                            const Workspace& ws);

// Few-shot blocks from sample.fewshot_file. Block id "gen" prefixes
// generation prompts (overridable per prompt via fewshot_id); block id "tf"
// feeds the True/False evaluation prompt.
std::map<std::string, corpus::FewshotBlock> load_fewshot(const config::RunConfig& config);
corpus::FewshotBlock tf_fewshot(const std::map<std::string, corpus::FewshotBlock>& blocks);

// Step 1: m candidate responses per generation prompt, temperatures assigned
// round-robin.
void cmd_sample(const config::RunConfig& config, const std::string& prompts_path);

// Step 2: factuality scores. MCQA prompts get one p_true score per option
// (sample_id = option index, flag "mcqa_option"); short-form samples one
// score each; long-form samples go through claim extraction (claims.jsonl is
// written as a side artifact).
void cmd_score(const config::RunConfig& config, const std::string& prompts_path,
               const std::string& snapshot_path = {});

// Step 3a: preference pairs. Generation prompts use pref.source; MCQA
// prompts always use the highest-p_true-option construction.
void cmd_build_prefs(const config::RunConfig& config, const std::string& prompts_path);

// Step 3b: DPO against the frozen base snapshot.
void cmd_train_dpo(const config::RunConfig& config, const std::string& prompts_path);

// SK-Tuning data construction and training.
void cmd_build_sk(const config::RunConfig& config, const std::string& prompts_path);
void cmd_train_sk(const config::RunConfig& config);

// Evaluation battery over the given snapshot (default: base). Writes
// report.json.
void cmd_eval(const config::RunConfig& config, const std::string& prompts_path,
              const std::string& snapshot_path = {});

// Pretty-prints report.json to stdout.
void cmd_report(const config::RunConfig& config);

std::string file_sha256(const std::string& path);

}  // namespace safact::pipeline
