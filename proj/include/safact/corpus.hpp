#pragma once

#include <nlohmann/json.hpp>

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

// Canonical data model for every artifact the pipeline produces, plus
// append-only JSONL persistence. One JSON object per line, fields in schema
// order, validated on both write and read.

namespace safact::corpus {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

struct CorpusError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A record that violates its type's invariants. `field` names the offender,
// `index` is the position within the batch (or line number on read).
struct SchemaError : CorpusError {
  SchemaError(const std::string& msg, std::string field_, size_t index_)
      : CorpusError(msg), field(std::move(field_)), index(index_) {}
  std::string field;
  size_t index = 0;
};

struct LineError : CorpusError {
  LineError(const std::string& msg, size_t line_) : CorpusError(msg), line(line_) {}
  size_t line = 0;
};

enum class Task { mcqa, short_form, long_form };

std::string task_name(Task t);
Task task_from_name(const std::string& name);

enum class PairSource { ptrue, se, usc, mcqa };

std::string pair_source_name(PairSource s);
PairSource pair_source_from_name(const std::string& name);

struct PromptRecord {
  std::string id;
  Task task = Task::short_form;
  std::string prompt;
  std::vector<std::string> options;       // mcqa only
  std::optional<std::string> golden;      // reference answer
  std::optional<std::string> fewshot_id;  // few-shot prompt block
};

struct FewshotBlock {
  std::string id;
  std::string text;  // verbatim prefix, stored byte-exact
};

struct ResponseSample {
  std::string prompt_id;
  int sample_id = 0;
  std::string text;
  double temperature = 1.0;
  std::string backend;
  bool abstained = false;
};

struct AtomicClaimRecord {
  std::string prompt_id;
  int sample_id = 0;
  int claim_id = 0;
  std::string claim;
  std::string question;
};

struct ClaimPTrue {
  int claim_id = 0;
  double p_true = 0.0;
};

struct FactualityScore {
  std::string prompt_id;
  int sample_id = 0;
  double score = 0.0;
  std::optional<std::vector<ClaimPTrue>> per_claim;
  std::optional<std::string> flag;  // "abstained", "no_claims", "mcqa_option"
};

struct PreferencePair {
  std::string prompt_id;
  std::string chosen_text;
  std::string rejected_text;
  double chosen_score = 0.0;
  double rejected_score = 0.0;
  PairSource source = PairSource::ptrue;
};

struct PredictionPair {
  std::string question;  // fully assembled True/False prompt body
  std::string answer;    // the proposed answer under evaluation
  std::string positive;  // "A" or "B"
  std::string negative;
};

// Abstain detection: prefix match after whitespace trim, case-sensitive.
inline const std::vector<std::string> kDefaultAbstainPatterns = {
    "I have no comment", "I could not find"};

bool is_abstained(const std::string& text,
                  const std::vector<std::string>& patterns = kDefaultAbstainPatterns);

// Per-type codec + invariant checks. `index` feeds error reporting.
void validate_record(const PromptRecord& r, size_t index = 0);
void validate_record(const FewshotBlock& r, size_t index = 0);
void validate_record(const ResponseSample& r, size_t index = 0);
void validate_record(const AtomicClaimRecord& r, size_t index = 0);
void validate_record(const FactualityScore& r, size_t index = 0);
void validate_record(const PreferencePair& r, size_t index = 0);
void validate_record(const PredictionPair& r, size_t index = 0);

ojson record_to_json(const PromptRecord& r);
ojson record_to_json(const FewshotBlock& r);
ojson record_to_json(const ResponseSample& r);
ojson record_to_json(const AtomicClaimRecord& r);
ojson record_to_json(const FactualityScore& r);
ojson record_to_json(const PreferencePair& r);
ojson record_to_json(const PredictionPair& r);

void record_from_json(const json& j, PromptRecord& r);
void record_from_json(const json& j, FewshotBlock& r);
void record_from_json(const json& j, ResponseSample& r);
void record_from_json(const json& j, AtomicClaimRecord& r);
void record_from_json(const json& j, FactualityScore& r);
void record_from_json(const json& j, PreferencePair& r);
void record_from_json(const json& j, PredictionPair& r);

// Unique key within one file, empty when the type has none.
std::string record_key(const PromptRecord& r);
std::string record_key(const FewshotBlock& r);
std::string record_key(const ResponseSample& r);
std::string record_key(const AtomicClaimRecord& r);
std::string record_key(const FactualityScore& r);
inline std::string record_key(const PreferencePair&) { return {}; }
inline std::string record_key(const PredictionPair&) { return {}; }

namespace detail {
size_t write_lines(const std::string& path, const std::vector<std::string>& lines,
                   const std::vector<std::string>& keys);
std::vector<json> read_lines(const std::string& path);
}  // namespace detail

// Appends `records` to `path`, one JSON object per line. The whole batch is
// validated (including key uniqueness against any existing file content)
// before a single byte is written. Returns the number of records written.
template <typename T>
size_t write_records(const std::string& path, const std::vector<T>& records) {
  std::vector<std::string> lines;
  std::vector<std::string> keys;
  lines.reserve(records.size());
  keys.reserve(records.size());
  for (size_t i = 0; i < records.size(); ++i) {
    validate_record(records[i], i);
    lines.push_back(record_to_json(records[i]).dump());
    keys.push_back(record_key(records[i]));
  }
  return detail::write_lines(path, lines, keys);
}

// Reads and validates every line of `path`. Errors cite 1-based line numbers.
template <typename T>
std::vector<T> read_records(const std::string& path) {
  std::vector<T> out;
  size_t line_no = 0;
  std::vector<std::string> seen_keys;
  for (const json& j : detail::read_lines(path)) {
    ++line_no;
    T rec{};
    try {
      record_from_json(j, rec);
      validate_record(rec, line_no);
    } catch (const SchemaError&) {
      throw;
    } catch (const std::exception& e) {
      throw LineError(path + ":" + std::to_string(line_no) + ": " + e.what(), line_no);
    }
    std::string key = record_key(rec);
    if (!key.empty()) {
      for (const auto& k : seen_keys)
        if (k == key)
          throw LineError(path + ":" + std::to_string(line_no) +
                              ": duplicate key " + key,
                          line_no);
      seen_keys.push_back(key);
    }
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace safact::corpus
