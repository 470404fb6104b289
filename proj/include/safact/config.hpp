#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

// Run configuration: one JSON file with one section per pipeline stage.
// Unknown keys are rejected so typos fail loudly.

namespace safact::config {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct BackendSection {
  std::string base_url;
  std::string model = "gpt-3.5-turbo";
  std::string api_key_env = "OPENAI_API_KEY";
  std::string mock_fixtures;  // fixtures JSONL; non-empty selects the mock
  int max_inflight = 4;
};

struct SampleSection {
  int m = 30;
  std::vector<double> temperatures = {1.0, 0.9, 0.8};
  std::string fewshot_file;
  int max_tokens = 64;
  uint64_t seed = 1;
};

struct PrefSection {
  double alpha = 0.5;
  std::string source = "ptrue";  // ptrue | se | usc | mcqa
};

struct DpoSection {
  double beta = 0.1;
  int epochs = 5;
  int batch_size = 8;
  double lr = 5e-6;
  uint64_t seed = 1;
};

struct SkSection {
  int k_samples = 30;
  int epochs = 1;
  int batch_size = 8;
  double lr = 5e-7;
  uint64_t seed = 1;
};

struct EvalSection {
  int n_bins = 10;
  std::vector<std::string> abstain_patterns = {"I have no comment", "I could not find"};
};

struct PathsSection {
  std::string workdir = ".";
  std::string snapshots = "snapshots";
};

struct RunConfig {
  BackendSection backend;
  SampleSection sample;
  PrefSection pref;
  DpoSection dpo;
  SkSection sk;
  EvalSection eval;
  PathsSection paths;
};

RunConfig load_config(const std::string& path);
RunConfig parse_config(const std::string& json_text, const std::string& origin = "<config>");

// SHA-256 over the canonical serialized form; goes into every run manifest.
std::string config_hash(const RunConfig& config);

}  // namespace safact::config
