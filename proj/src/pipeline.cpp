#include "safact/pipeline.hpp"

#include "safact/align.hpp"
#include "safact/backend.hpp"
#include "safact/metrics.hpp"
#include "safact/selfeval.hpp"
#include "safact/sktune.hpp"
#include "safact/util.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>

namespace safact::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

Workspace::Workspace(const config::RunConfig& config) {
  workdir = config.paths.workdir.empty() ? "." : config.paths.workdir;
  fs::path snap(config.paths.snapshots);
  snapshots_dir = snap.is_absolute() ? snap.string() : (fs::path(workdir) / snap).string();
}

std::string file_sha256(const std::string& path) {
  return backend::sha256_hex(read_file(path));
}

namespace {

void require_file(const std::string& path, const std::string& producer) {
  if (!fs::exists(path))
    throw UsageError("missing input " + path +
                     (producer.empty() ? "" : " (produced by `" + producer + "`)"));
}

void replace_artifact(const std::string& path) {
  std::error_code ec;
  fs::remove(path, ec);
}

void write_manifest(const config::RunConfig& config, const std::string& subcommand,
                    const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs) {
  if (outputs.empty()) return;
  ojson m;
  m["tool"] = "safact";
  m["subcommand"] = subcommand;
  m["config_hash"] = config::config_hash(config);
  ojson in = ojson::object();
  for (const auto& p : inputs)
    if (fs::exists(p)) in[p] = file_sha256(p);
  m["inputs"] = std::move(in);
  ojson out = ojson::object();
  for (const auto& p : outputs)
    if (fs::exists(p)) out[p] = file_sha256(p);
  m["outputs"] = std::move(out);
  // the manifest sits next to the primary artifact: <artifact>.manifest.json
  fs::path primary(outputs.front());
  std::string manifest_path =
      (primary.parent_path() / (primary.stem().string() + ".manifest.json")).string();
  write_file(manifest_path, m.dump(2) + "\n");
}

std::unique_ptr<backend::Backend> make_backend(const config::RunConfig& config,
                                               const Workspace& ws) {
  if (!config.backend.mock_fixtures.empty())
    return std::make_unique<backend::MockBackend>(config.backend.mock_fixtures,
                                                  ws.workdir + "/backend_trace.jsonl");
  if (config.backend.base_url.empty())
    throw UsageError("backend.base_url or backend.mock_fixtures must be set");
  backend::HttpConfig http;
  http.base_url = config.backend.base_url;
  http.api_key_env = config.backend.api_key_env;
  http.max_inflight = config.backend.max_inflight;
  http.trace_path = ws.workdir + "/backend_trace.jsonl";
  return std::make_unique<backend::HttpBackend>(http);
}

std::vector<corpus::PromptRecord> load_prompts(const std::string& path) {
  require_file(path, "");
  return corpus::read_records<corpus::PromptRecord>(path);
}

// Few-shot prefix + prompt, the generation context for sampling and DPO.
std::string generation_context(const corpus::PromptRecord& prompt,
                               const std::map<std::string, corpus::FewshotBlock>& blocks) {
  std::string fewshot_id = prompt.fewshot_id.value_or("gen");
  auto it = blocks.find(fewshot_id);
  if (it == blocks.end()) return prompt.prompt;
  return it->second.text + "\n" + prompt.prompt;
}

uint64_t sample_seed(uint64_t base, const std::string& prompt_id, int k) {
  return mix64(mix64(base ^ hash_str(prompt_id)) + uint64_t(k));
}

}  // namespace

std::map<std::string, corpus::FewshotBlock> load_fewshot(const config::RunConfig& config) {
  std::map<std::string, corpus::FewshotBlock> blocks;
  if (!config.sample.fewshot_file.empty()) {
    require_file(config.sample.fewshot_file, "");
    for (auto& b : corpus::read_records<corpus::FewshotBlock>(config.sample.fewshot_file))
      blocks[b.id] = std::move(b);
  }
  return blocks;
}

corpus::FewshotBlock tf_fewshot(const std::map<std::string, corpus::FewshotBlock>& blocks) {
  auto it = blocks.find("tf");
  if (it != blocks.end()) return it->second;
  // repo default, used when the fewshot file ships no "tf" block
  return {"tf",
          "Question: Is water wet?\nProposed Answer: yes\nIs the proposed answer:\n"
          "A. True\nB. False\nThe proposed answer is: A"};
}

policy::PolicySnapshot ensure_base_snapshot(const config::RunConfig& config,
                                            const Workspace& ws) {
  if (fs::exists(ws.base_snapshot_path()))
    return policy::load_snapshot(ws.base_snapshot_path());
  fs::create_directories(ws.snapshots_dir);
  // Seeded init. Non-printable byte columns are pushed far down so sampled
  // text stays printable ASCII (JSONL artifacts require valid UTF-8); EOS is
  // mildly favored so responses terminate.
  policy::PolicySnapshot p = policy::PolicySnapshot::random(config.sample.seed, 0.5);
  for (int i = 0; i < policy::kVocab; ++i) {
    for (int j = 0; j < 256; ++j)
      if (j != '\n' && (j < 32 || j > 126)) p.at(i, j) = -20.0;
    p.at(i, policy::kBos) = -20.0;
    p.at(i, policy::kEos) += 1.0;
  }
  policy::save_snapshot(p, ws.base_snapshot_path());
  return p;
}

void cmd_sample(const config::RunConfig& config, const std::string& prompts_path) {
  Workspace ws(config);
  fs::create_directories(ws.workdir);
  auto prompts = load_prompts(prompts_path);
  auto blocks = load_fewshot(config);
  policy::PolicySnapshot base = ensure_base_snapshot(config, ws);

  std::vector<corpus::ResponseSample> samples;
  for (const auto& prompt : prompts) {
    if (prompt.task == corpus::Task::mcqa) continue;  // options come with the prompt
    std::string context = generation_context(prompt, blocks);
    for (int k = 0; k < config.sample.m; ++k) {
      double temperature =
          config.sample.temperatures[size_t(k) % config.sample.temperatures.size()];
      corpus::ResponseSample s;
      s.prompt_id = prompt.id;
      s.sample_id = k;
      s.temperature = temperature;
      s.backend = "policy";
      s.text = policy::sample(base, context, temperature, config.sample.max_tokens,
                              sample_seed(config.sample.seed, prompt.id, k));
      if (s.text.empty()) s.text = "(empty)";  // corpus text is non-degenerate downstream
      s.abstained = corpus::is_abstained(s.text, config.eval.abstain_patterns);
      samples.push_back(std::move(s));
    }
  }
  replace_artifact(ws.samples_path());
  corpus::write_records(ws.samples_path(), samples);
  write_manifest(config, "sample", {prompts_path, config.sample.fewshot_file},
                 {ws.samples_path(), ws.base_snapshot_path()});
  std::cerr << "sample: wrote " << samples.size() << " samples to " << ws.samples_path()
            << "\n";
}

void cmd_score(const config::RunConfig& config, const std::string& prompts_path,
               const std::string& snapshot_path) {
  Workspace ws(config);
  auto prompts = load_prompts(prompts_path);
  auto blocks = load_fewshot(config);
  corpus::FewshotBlock tf = tf_fewshot(blocks);

  std::string snap = snapshot_path.empty() ? ws.base_snapshot_path() : snapshot_path;
  require_file(snap, "sample");
  policy::PolicySnapshot scorer_snapshot = policy::load_snapshot(snap);
  selfeval::PolicyScorer scorer(scorer_snapshot);

  bool needs_samples = std::any_of(prompts.begin(), prompts.end(), [](const auto& p) {
    return p.task != corpus::Task::mcqa;
  });
  std::vector<corpus::ResponseSample> samples;
  if (needs_samples) {
    require_file(ws.samples_path(), "sample");
    samples = corpus::read_records<corpus::ResponseSample>(ws.samples_path());
  }

  bool has_long_form = std::any_of(prompts.begin(), prompts.end(), [](const auto& p) {
    return p.task == corpus::Task::long_form;
  });
  std::unique_ptr<backend::Backend> claim_backend;
  if (has_long_form) claim_backend = make_backend(config, ws);

  std::vector<corpus::FactualityScore> scores;
  std::vector<corpus::AtomicClaimRecord> claims;
  selfeval::LongFormOptions long_opts;
  long_opts.extraction_model = config.backend.model;

  for (const auto& prompt : prompts) {
    if (prompt.task == corpus::Task::mcqa) {
      for (size_t i = 0; i < prompt.options.size(); ++i) {
        corpus::FactualityScore s;
        s.prompt_id = prompt.id;
        s.sample_id = int(i);
        s.score = selfeval::p_true(scorer, prompt.prompt, prompt.options[i], tf).p_true;
        s.flag = "mcqa_option";
        scores.push_back(std::move(s));
      }
      continue;
    }
    for (const auto& sample : samples) {
      if (sample.prompt_id != prompt.id) continue;
      if (prompt.task == corpus::Task::long_form) {
        scores.push_back(selfeval::score_long(scorer, *claim_backend, prompt, sample, tf,
                                              long_opts, &claims));
      } else if (sample.abstained) {
        corpus::FactualityScore s;
        s.prompt_id = prompt.id;
        s.sample_id = sample.sample_id;
        s.score = 0.0;
        s.flag = "abstained";
        scores.push_back(std::move(s));
      } else {
        scores.push_back(selfeval::score_short(scorer, prompt, sample, tf));
      }
    }
  }

  replace_artifact(ws.scores_path());
  corpus::write_records(ws.scores_path(), scores);
  std::vector<std::string> outputs{ws.scores_path()};
  if (has_long_form) {
    replace_artifact(ws.claims_path());
    corpus::write_records(ws.claims_path(), claims);
    outputs.push_back(ws.claims_path());
  }
  write_manifest(config, "score", {prompts_path, ws.samples_path(), snap}, outputs);
  std::cerr << "score: wrote " << scores.size() << " scores to " << ws.scores_path() << "\n";
}

void cmd_build_prefs(const config::RunConfig& config, const std::string& prompts_path) {
  Workspace ws(config);
  auto prompts = load_prompts(prompts_path);
  auto blocks = load_fewshot(config);
  corpus::FewshotBlock tf = tf_fewshot(blocks);
  require_file(ws.scores_path(), "score");
  auto scores = corpus::read_records<corpus::FactualityScore>(ws.scores_path());

  std::map<std::string, std::map<int, const corpus::FactualityScore*>> by_prompt;
  for (const auto& s : scores) by_prompt[s.prompt_id][s.sample_id] = &s;

  std::vector<corpus::ResponseSample> samples;
  if (fs::exists(ws.samples_path()))
    samples = corpus::read_records<corpus::ResponseSample>(ws.samples_path());
  std::map<std::string, std::map<int, const corpus::ResponseSample*>> samples_by_prompt;
  for (const auto& s : samples) samples_by_prompt[s.prompt_id][s.sample_id] = &s;

  sktune::NormalizedMatchOracle oracle;
  std::unique_ptr<backend::Backend> judge;

  std::vector<corpus::PreferencePair> pairs;
  std::vector<std::string> warnings;
  for (const auto& prompt : prompts) {
    if (prompt.task == corpus::Task::mcqa) {
      auto it = by_prompt.find(prompt.id);
      if (it == by_prompt.end()) continue;
      std::vector<double> option_scores(prompt.options.size(), 0.0);
      for (size_t i = 0; i < prompt.options.size(); ++i) {
        auto sit = it->second.find(int(i));
        if (sit == it->second.end())
          throw PipelineError("missing mcqa option score for " + prompt.id + " option " +
                              std::to_string(i) + " (produced by `score`)");
        option_scores[i] = sit->second->score;
      }
      auto p = align::build_mcqa_preferences(prompt, option_scores, tf, &warnings);
      pairs.insert(pairs.end(), p.begin(), p.end());
      continue;
    }

    auto sit = samples_by_prompt.find(prompt.id);
    if (sit == samples_by_prompt.end() || sit->second.size() < 2) {
      warnings.push_back("prompt " + prompt.id + ": fewer than 2 samples, skipped");
      continue;
    }
    std::vector<align::ScoredSample> scored;
    for (const auto& [sid, sample] : sit->second) {
      align::ScoredSample ss;
      ss.sample_id = sid;
      ss.text = sample->text;
      auto score_it = by_prompt.count(prompt.id) ? by_prompt[prompt.id].find(sid)
                                                 : by_prompt[prompt.id].end();
      if (score_it == by_prompt[prompt.id].end())
        throw PipelineError("missing score for " + prompt.id + "/" + std::to_string(sid) +
                            " (produced by `score`)");
      ss.score = score_it->second->score;
      scored.push_back(std::move(ss));
    }

    std::vector<corpus::PreferencePair> p;
    if (config.pref.source == "ptrue") {
      p = align::build_preferences(prompt.id, scored, config.pref.alpha, &warnings);
    } else if (config.pref.source == "se") {
      p = align::build_preferences_se(prompt.id, scored, oracle, &warnings);
    } else if (config.pref.source == "usc") {
      if (!judge) judge = make_backend(config, ws);
      p = align::build_preferences_usc(
          prompt.id, scored, *judge, config.backend.model,
          "Which response is most consistent with the others? Reply with \"Answer: N\".\n"
          "{responses}",
          oracle, &warnings);
    } else {
      throw UsageError("pref.source mcqa applies only to mcqa prompts");
    }
    pairs.insert(pairs.end(), p.begin(), p.end());
  }

  for (const auto& w : warnings) std::cerr << "build-prefs: warning: " << w << "\n";
  replace_artifact(ws.prefs_path());
  corpus::write_records(ws.prefs_path(), pairs);
  write_manifest(config, "build-prefs", {prompts_path, ws.scores_path(), ws.samples_path()},
                 {ws.prefs_path()});
  std::cerr << "build-prefs: wrote " << pairs.size() << " pairs to " << ws.prefs_path()
            << "\n";
}

void cmd_train_dpo(const config::RunConfig& config, const std::string& prompts_path) {
  Workspace ws(config);
  auto prompts = load_prompts(prompts_path);
  auto blocks = load_fewshot(config);
  require_file(ws.prefs_path(), "build-prefs");
  auto pairs = corpus::read_records<corpus::PreferencePair>(ws.prefs_path());
  if (pairs.empty()) throw PipelineError("no preference pairs in " + ws.prefs_path());

  std::map<std::string, std::string> contexts;
  for (const auto& p : prompts) contexts[p.id] = generation_context(p, blocks);
  auto examples = align::to_dpo_examples(pairs, [&](const std::string& id) {
    auto it = contexts.find(id);
    if (it == contexts.end()) throw PipelineError("preference pair references unknown prompt " + id);
    return it->second;
  });

  policy::PolicySnapshot reference = ensure_base_snapshot(config, ws);
  align::DpoConfig dpo;
  dpo.beta = config.dpo.beta;
  dpo.epochs = config.dpo.epochs;
  dpo.batch_size = config.dpo.batch_size;
  dpo.lr = config.dpo.lr;
  dpo.seed = config.dpo.seed;
  dpo.trace_path = ws.workdir + "/dpo_trace.csv";
  policy::PolicySnapshot trained = align::dpo_train(reference, reference, examples, dpo);
  policy::save_snapshot(trained, ws.dpo_snapshot_path());
  write_manifest(config, "train-dpo", {prompts_path, ws.prefs_path(), ws.base_snapshot_path()},
                 {ws.dpo_snapshot_path(), dpo.trace_path});
  std::cerr << "train-dpo: wrote " << ws.dpo_snapshot_path() << "\n";
}

void cmd_build_sk(const config::RunConfig& config, const std::string& prompts_path) {
  Workspace ws(config);
  fs::create_directories(ws.workdir);
  auto prompts = load_prompts(prompts_path);
  auto blocks = load_fewshot(config);
  corpus::FewshotBlock tf = tf_fewshot(blocks);
  policy::PolicySnapshot base = ensure_base_snapshot(config, ws);

  std::vector<corpus::PromptRecord> with_golden;
  for (const auto& p : prompts)
    if (p.golden) with_golden.push_back(p);
  if (with_golden.empty())
    throw PipelineError("build-sk: no prompts carry a golden answer in " + prompts_path);

  sktune::SkBuildConfig build;
  build.k_samples = config.sk.k_samples;
  sktune::NormalizedMatchOracle oracle;
  auto sampler = [&](const corpus::PromptRecord& prompt, int k) {
    std::string text = policy::sample(
        base, generation_context(prompt, blocks), build.temperature, config.sample.max_tokens,
        sample_seed(config.sk.seed, "sk:" + prompt.id, k));
    return text;
  };
  auto pairs = sktune::build_sk_data(sampler, with_golden, oracle, tf, build);
  replace_artifact(ws.skdata_path());
  corpus::write_records(ws.skdata_path(), pairs);
  write_manifest(config, "build-sk", {prompts_path, config.sample.fewshot_file},
                 {ws.skdata_path()});
  std::cerr << "build-sk: wrote " << pairs.size() << " prediction pairs to "
            << ws.skdata_path() << "\n";
}

void cmd_train_sk(const config::RunConfig& config) {
  Workspace ws(config);
  require_file(ws.skdata_path(), "build-sk");
  auto pairs = corpus::read_records<corpus::PredictionPair>(ws.skdata_path());
  if (pairs.empty()) throw PipelineError("no prediction pairs in " + ws.skdata_path());
  policy::PolicySnapshot base = ensure_base_snapshot(config, ws);

  sktune::SkTrainConfig train;
  train.epochs = config.sk.epochs;
  train.batch_size = config.sk.batch_size;
  train.lr = config.sk.lr;
  train.seed = config.sk.seed;
  train.trace_path = ws.workdir + "/sk_trace.csv";
  policy::PolicySnapshot trained = sktune::sk_train(base, pairs, train);
  policy::save_snapshot(trained, ws.sk_snapshot_path());
  write_manifest(config, "train-sk", {ws.skdata_path(), ws.base_snapshot_path()},
                 {ws.sk_snapshot_path(), train.trace_path});
  std::cerr << "train-sk: wrote " << ws.sk_snapshot_path() << "\n";
}

void cmd_eval(const config::RunConfig& config, const std::string& prompts_path,
              const std::string& snapshot_path) {
  Workspace ws(config);
  auto prompts = load_prompts(prompts_path);
  auto blocks = load_fewshot(config);
  corpus::FewshotBlock tf = tf_fewshot(blocks);
  std::string snap = snapshot_path.empty() ? ws.base_snapshot_path() : snapshot_path;
  require_file(snap, "sample");
  policy::PolicySnapshot snapshot = policy::load_snapshot(snap);
  selfeval::PolicyScorer scorer(snapshot);
  sktune::NormalizedMatchOracle oracle;

  // MCQA: selection accuracy over per-option p_true
  std::vector<metrics::QuestionScores> questions;
  for (const auto& prompt : prompts) {
    if (prompt.task != corpus::Task::mcqa || !prompt.golden) continue;
    metrics::QuestionScores q;
    q.correct_index = -1;
    for (size_t i = 0; i < prompt.options.size(); ++i) {
      q.option_scores.push_back(
          selfeval::p_true(scorer, prompt.prompt, prompt.options[i], tf).p_true);
      if (sktune::check_equivalence(oracle, prompt.options[i], *prompt.golden).equivalent)
        q.correct_index = int(i);
    }
    if (q.correct_index >= 0) questions.push_back(std::move(q));
  }

  // short-form samples: p_true confidence vs golden-match correctness
  std::vector<metrics::Prediction> predictions;
  std::vector<double> correct_scores, incorrect_scores;
  if (fs::exists(ws.samples_path())) {
    auto samples = corpus::read_records<corpus::ResponseSample>(ws.samples_path());
    std::map<std::string, const corpus::PromptRecord*> by_id;
    for (const auto& p : prompts) by_id[p.id] = &p;
    for (const auto& sample : samples) {
      auto it = by_id.find(sample.prompt_id);
      if (it == by_id.end() || it->second->task != corpus::Task::short_form ||
          !it->second->golden || sample.abstained)
        continue;
      double conf =
          selfeval::p_true(scorer, it->second->prompt, sample.text, tf).p_true;
      bool correct =
          sktune::check_equivalence(oracle, sample.text, *it->second->golden).equivalent;
      predictions.push_back({conf, correct});
      (correct ? correct_scores : incorrect_scores).push_back(conf);
    }
  }

  ojson report;
  if (!questions.empty())
    report["selection_accuracy"] = metrics::selection_accuracy(questions);
  else
    report["selection_accuracy"] = nullptr;
  if (!correct_scores.empty() && !incorrect_scores.empty())
    report["auroc"] = metrics::auroc(correct_scores, incorrect_scores);
  else
    report["auroc"] = nullptr;  // degenerate label split
  if (!predictions.empty()) {
    auto cal = metrics::calibration(predictions, config.eval.n_bins);
    ojson bins = ojson::array();
    for (const auto& b : cal.bins)
      bins.push_back(ojson{{"lower", b.lower},
                           {"upper", b.upper},
                           {"mean_confidence", b.mean_confidence},
                           {"empirical_accuracy", b.empirical_accuracy},
                           {"count", b.count}});
    report["calibration"] = ojson{{"n_bins", cal.n_bins}, {"ece", cal.ece}, {"bins", bins}};
  } else {
    report["calibration"] = nullptr;
  }

  // FActScore needs claim verdicts; they come from a labeled verdicts file
  if (fs::exists(ws.verdicts_path()) && fs::exists(ws.samples_path())) {
    auto samples = corpus::read_records<corpus::ResponseSample>(ws.samples_path());
    std::map<std::pair<std::string, int>, metrics::ResponseVerdicts> verdicts;
    std::map<std::string, const corpus::PromptRecord*> by_id;
    for (const auto& p : prompts) by_id[p.id] = &p;
    for (const auto& s : samples) {
      auto it = by_id.find(s.prompt_id);
      if (it == by_id.end() || it->second->task != corpus::Task::long_form) continue;
      verdicts[{s.prompt_id, s.sample_id}].abstained = s.abstained;
    }
    for (const json& j : corpus::detail::read_lines(ws.verdicts_path())) {
      auto key = std::make_pair(j.at("prompt_id").get<std::string>(),
                                j.at("sample_id").get<int>());
      auto it = verdicts.find(key);
      if (it == verdicts.end()) continue;
      it->second.supported.push_back(j.at("supported").get<bool>());
    }
    std::vector<metrics::ResponseVerdicts> rv;
    for (auto& [key, v] : verdicts) rv.push_back(std::move(v));
    if (!rv.empty()) {
      auto fr = metrics::fact_score(rv);
      report["fact_score"] = ojson{{"fact_score", fr.fact_score},
                                   {"respond_ratio", fr.respond_ratio},
                                   {"mean_correct", fr.mean_correct},
                                   {"mean_incorrect", fr.mean_incorrect}};
    }
  }

  report["meta"] = ojson{{"config_hash", config::config_hash(config)},
                         {"snapshot", snap},
                         {"snapshot_version", snapshot.version},
                         {"seed", config.sample.seed}};
  replace_artifact(ws.report_path());
  write_file(ws.report_path(), report.dump(2) + "\n");
  write_manifest(config, "eval", {prompts_path, ws.samples_path(), snap},
                 {ws.report_path()});
  std::cerr << "eval: wrote " << ws.report_path() << "\n";
}

void cmd_report(const config::RunConfig& config) {
  Workspace ws(config);
  require_file(ws.report_path(), "eval");
  json report = json::parse(read_file(ws.report_path()));
  auto show = [&](const char* key) {
    std::cout << key << ": ";
    if (report.contains(key) && !report.at(key).is_null())
      std::cout << report.at(key).dump();
    else
      std::cout << "n/a";
    std::cout << "\n";
  };
  show("selection_accuracy");
  show("auroc");
  if (report.contains("calibration") && !report.at("calibration").is_null())
    std::cout << "ece: " << report.at("calibration").at("ece").dump() << "\n";
  show("fact_score");
}

}  // namespace safact::pipeline
