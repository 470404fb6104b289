#include <doctest.h>

#include "safact/config.hpp"
#include "safact/pipeline.hpp"
#include "safact/util.hpp"

#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>

using namespace safact;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::string kBin = SAFACT_BIN;
const std::string kData = SAFACT_DATA_DIR;

struct Run {
  fs::path root;
  std::string config_path;
  std::string prompts;

  Run() {
    root = fs::temp_directory_path() /
           ("safact_pipeline_" + std::to_string(std::random_device{}()));
    fs::create_directories(root);
    prompts = kData + "/toy/prompts.jsonl";
    json cfg = json::parse(read_file(kData + "/toy/config.json"));
    cfg["sample"]["fewshot_file"] = kData + "/toy/fewshot.jsonl";
    cfg["paths"]["workdir"] = (root / "run").string();
    config_path = (root / "config.json").string();
    write_file(config_path, cfg.dump(2));
  }
  ~Run() { fs::remove_all(root); }

  int exec(const std::string& args) const {
    std::string cmd = kBin + " --config " + config_path + " " + args + " >" +
                      (root / "stdout.txt").string() + " 2>" + (root / "stderr.txt").string();
    int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
  }
  std::string workfile(const std::string& name) const {
    return (root / "run" / name).string();
  }
};

}  // namespace

TEST_CASE("full toy pipeline runs clean and writes every artifact") {
  Run run;
  REQUIRE(run.exec("sample --prompts " + run.prompts) == 0);
  REQUIRE(run.exec("score --prompts " + run.prompts) == 0);
  REQUIRE(run.exec("build-prefs --prompts " + run.prompts) == 0);
  REQUIRE(run.exec("train-dpo --prompts " + run.prompts) == 0);
  REQUIRE(run.exec("build-sk --prompts " + run.prompts) == 0);
  REQUIRE(run.exec("train-sk") == 0);
  REQUIRE(run.exec("eval --prompts " + run.prompts) == 0);
  REQUIRE(run.exec("report") == 0);

  for (const char* f : {"samples.jsonl", "scores.jsonl", "prefs.jsonl", "skdata.jsonl",
                        "report.json", "dpo_trace.csv", "sk_trace.csv",
                        "snapshots/policy.snap", "snapshots/policy_dpo.snap",
                        "snapshots/policy_skt.snap"})
    CHECK_MESSAGE(fs::exists(run.workfile(f)), f);

  // each subcommand leaves a manifest next to its primary artifact
  for (const char* m : {"samples.manifest.json", "scores.manifest.json",
                        "prefs.manifest.json", "skdata.manifest.json",
                        "report.manifest.json"})
    CHECK_MESSAGE(fs::exists(run.workfile(m)), m);

  json manifest = json::parse(read_file(run.workfile("samples.manifest.json")));
  CHECK(manifest.at("subcommand") == "sample");
  CHECK(manifest.at("config_hash").get<std::string>().size() == 64);
  CHECK(manifest.at("inputs").size() >= 1);

  json report = json::parse(read_file(run.workfile("report.json")));
  CHECK(report.contains("selection_accuracy"));
  CHECK(report.contains("auroc"));
  CHECK(report.contains("calibration"));
  CHECK(report.at("meta").at("snapshot_version") == "1");

  // every persisted artifact re-reads cleanly through the validating codec
  CHECK(corpus::read_records<corpus::ResponseSample>(run.workfile("samples.jsonl")).size() >
        0);
  CHECK(corpus::read_records<corpus::FactualityScore>(run.workfile("scores.jsonl")).size() >
        0);
  CHECK(corpus::read_records<corpus::PreferencePair>(run.workfile("prefs.jsonl")).size() > 0);
  CHECK(corpus::read_records<corpus::PredictionPair>(run.workfile("skdata.jsonl")).size() > 0);
}

TEST_CASE("a replayed stage is byte-identical") {
  Run run;
  REQUIRE(run.exec("sample --prompts " + run.prompts) == 0);
  std::string first = read_file(run.workfile("samples.jsonl"));
  REQUIRE(run.exec("sample --prompts " + run.prompts) == 0);
  CHECK(read_file(run.workfile("samples.jsonl")) == first);

  REQUIRE(run.exec("score --prompts " + run.prompts) == 0);
  std::string scores = read_file(run.workfile("scores.jsonl"));
  REQUIRE(run.exec("score --prompts " + run.prompts) == 0);
  CHECK(read_file(run.workfile("scores.jsonl")) == scores);
}

TEST_CASE("exit codes distinguish usage errors from runtime failures") {
  Run run;
  // missing upstream artifact is a usage error
  CHECK(run.exec("score --prompts " + run.prompts) == 2);
  CHECK(run.exec("build-prefs --prompts " + run.prompts) == 2);
  CHECK(run.exec("report") == 2);
  // nonexistent config file
  std::string cmd = kBin + " --config /nonexistent.json report 2>/dev/null >/dev/null";
  CHECK(WEXITSTATUS(std::system(cmd.c_str())) == 2);
  // nonexistent prompts file
  CHECK(run.exec("sample --prompts /nonexistent.jsonl") == 2);

  // empty preference file is a runtime failure, not misuse
  REQUIRE(run.exec("sample --prompts " + run.prompts) == 0);
  fs::create_directories(run.workfile(""));
  std::ofstream(run.workfile("prefs.jsonl")).close();
  CHECK(run.exec("train-dpo --prompts " + run.prompts) == 1);
}

TEST_CASE("config validation rejects unknown keys and bad ranges") {
  Run run;
  json cfg = json::parse(read_file(run.config_path));

  cfg["pref"]["alhpa"] = 0.5;  // typo
  write_file(run.config_path, cfg.dump());
  CHECK(run.exec("report") == 2);

  cfg["pref"].erase("alhpa");
  cfg["pref"]["alpha"] = 1.5;
  write_file(run.config_path, cfg.dump());
  CHECK(run.exec("report") == 2);
}

TEST_CASE("config hash is stable under key reordering") {
  config::RunConfig a = config::load_config(kData + "/toy/config.json");
  std::string h1 = config::config_hash(a);
  config::RunConfig b = a;
  CHECK(config::config_hash(b) == h1);
  b.sample.seed += 1;
  CHECK(config::config_hash(b) != h1);
}

TEST_CASE("sampled text stays printable and abstentions are flagged") {
  Run run;
  REQUIRE(run.exec("sample --prompts " + run.prompts) == 0);
  auto samples = corpus::read_records<corpus::ResponseSample>(run.workfile("samples.jsonl"));
  REQUIRE(!samples.empty());
  for (const auto& s : samples) {
    for (unsigned char c : s.text)
      CHECK(((c >= 32 && c <= 126) || c == '\n'));
    CHECK(s.abstained == corpus::is_abstained(s.text));
  }
}
