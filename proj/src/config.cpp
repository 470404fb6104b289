#include "safact/config.hpp"

#include "safact/backend.hpp"
#include "safact/util.hpp"

#include <nlohmann/json.hpp>

#include <set>

namespace safact::config {

using json = nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known,
                    const std::string& section) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw ConfigError("unknown config key \"" + it.key() + "\" in section " + section);
}

template <typename T>
void take(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

RunConfig parse_config(const std::string& json_text, const std::string& origin) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  reject_unknown(j, {"backend", "sample", "pref", "dpo", "sk", "eval", "paths"}, "<root>");

  RunConfig c;
  if (j.contains("backend")) {
    const json& s = j.at("backend");
    reject_unknown(s, {"base_url", "model", "api_key_env", "mock_fixtures", "max_inflight"},
                   "backend");
    take(s, "base_url", c.backend.base_url);
    take(s, "model", c.backend.model);
    take(s, "api_key_env", c.backend.api_key_env);
    take(s, "mock_fixtures", c.backend.mock_fixtures);
    take(s, "max_inflight", c.backend.max_inflight);
    if (c.backend.max_inflight < 1) throw ConfigError("backend.max_inflight must be >= 1");
  }
  if (j.contains("sample")) {
    const json& s = j.at("sample");
    reject_unknown(s, {"m", "temperatures", "fewshot_file", "max_tokens", "seed"}, "sample");
    take(s, "m", c.sample.m);
    take(s, "temperatures", c.sample.temperatures);
    take(s, "fewshot_file", c.sample.fewshot_file);
    take(s, "max_tokens", c.sample.max_tokens);
    take(s, "seed", c.sample.seed);
    if (c.sample.m < 1) throw ConfigError("sample.m must be >= 1");
    if (c.sample.max_tokens < 1) throw ConfigError("sample.max_tokens must be >= 1");
    if (c.sample.temperatures.empty())
      throw ConfigError("sample.temperatures must be non-empty");
    for (double t : c.sample.temperatures)
      if (!(t > 0.0)) throw ConfigError("sample.temperatures entries must be > 0");
  }
  if (j.contains("pref")) {
    const json& s = j.at("pref");
    reject_unknown(s, {"alpha", "source"}, "pref");
    take(s, "alpha", c.pref.alpha);
    take(s, "source", c.pref.source);
    if (!(c.pref.alpha > 0.0 && c.pref.alpha < 1.0))
      throw ConfigError("pref.alpha must lie in (0,1)");
    if (c.pref.source != "ptrue" && c.pref.source != "se" && c.pref.source != "usc" &&
        c.pref.source != "mcqa")
      throw ConfigError("pref.source must be one of ptrue|se|usc|mcqa");
  }
  if (j.contains("dpo")) {
    const json& s = j.at("dpo");
    reject_unknown(s, {"beta", "epochs", "batch_size", "lr", "seed"}, "dpo");
    take(s, "beta", c.dpo.beta);
    take(s, "epochs", c.dpo.epochs);
    take(s, "batch_size", c.dpo.batch_size);
    take(s, "lr", c.dpo.lr);
    take(s, "seed", c.dpo.seed);
    if (!(c.dpo.beta > 0.0)) throw ConfigError("dpo.beta must be > 0");
    if (c.dpo.epochs < 0) throw ConfigError("dpo.epochs must be >= 0");
    if (c.dpo.batch_size < 1) throw ConfigError("dpo.batch_size must be >= 1");
    if (!(c.dpo.lr > 0.0)) throw ConfigError("dpo.lr must be > 0");
  }
  if (j.contains("sk")) {
    const json& s = j.at("sk");
    reject_unknown(s, {"k_samples", "epochs", "batch_size", "lr", "seed"}, "sk");
    take(s, "k_samples", c.sk.k_samples);
    take(s, "epochs", c.sk.epochs);
    take(s, "batch_size", c.sk.batch_size);
    take(s, "lr", c.sk.lr);
    take(s, "seed", c.sk.seed);
    if (c.sk.k_samples < 1) throw ConfigError("sk.k_samples must be >= 1");
    if (c.sk.epochs < 0) throw ConfigError("sk.epochs must be >= 0");
    if (c.sk.batch_size < 1) throw ConfigError("sk.batch_size must be >= 1");
    if (!(c.sk.lr > 0.0)) throw ConfigError("sk.lr must be > 0");
  }
  if (j.contains("eval")) {
    const json& s = j.at("eval");
    reject_unknown(s, {"n_bins", "abstain_patterns"}, "eval");
    take(s, "n_bins", c.eval.n_bins);
    take(s, "abstain_patterns", c.eval.abstain_patterns);
    if (c.eval.n_bins < 1) throw ConfigError("eval.n_bins must be >= 1");
  }
  if (j.contains("paths")) {
    const json& s = j.at("paths");
    reject_unknown(s, {"workdir", "snapshots"}, "paths");
    take(s, "workdir", c.paths.workdir);
    take(s, "snapshots", c.paths.snapshots);
  }
  return c;
}

RunConfig load_config(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  return parse_config(text, path);
}

std::string config_hash(const RunConfig& c) {
  json j{{"backend",
          {{"base_url", c.backend.base_url},
           {"model", c.backend.model},
           {"api_key_env", c.backend.api_key_env},
           {"mock_fixtures", c.backend.mock_fixtures},
           {"max_inflight", c.backend.max_inflight}}},
         {"sample",
          {{"m", c.sample.m},
           {"temperatures", c.sample.temperatures},
           {"fewshot_file", c.sample.fewshot_file},
           {"max_tokens", c.sample.max_tokens},
           {"seed", c.sample.seed}}},
         {"pref", {{"alpha", c.pref.alpha}, {"source", c.pref.source}}},
         {"dpo",
          {{"beta", c.dpo.beta},
           {"epochs", c.dpo.epochs},
           {"batch_size", c.dpo.batch_size},
           {"lr", c.dpo.lr},
           {"seed", c.dpo.seed}}},
         {"sk",
          {{"k_samples", c.sk.k_samples},
           {"epochs", c.sk.epochs},
           {"batch_size", c.sk.batch_size},
           {"lr", c.sk.lr},
           {"seed", c.sk.seed}}},
         {"eval", {{"n_bins", c.eval.n_bins}, {"abstain_patterns", c.eval.abstain_patterns}}},
         {"paths", {{"workdir", c.paths.workdir}, {"snapshots", c.paths.snapshots}}}};
  return backend::sha256_hex(j.dump());
}

}  // namespace safact::config
