#include "safact/corpus.hpp"

#include "safact/util.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <unordered_set>

namespace safact::corpus {

namespace fs = std::filesystem;

std::string task_name(Task t) {
  switch (t) {
    case Task::mcqa: return "mcqa";
    case Task::short_form: return "short_form";
    case Task::long_form: return "long_form";
  }
  throw CorpusError("unknown task enum value");
}

Task task_from_name(const std::string& name) {
  if (name == "mcqa") return Task::mcqa;
  if (name == "short_form") return Task::short_form;
  if (name == "long_form") return Task::long_form;
  throw CorpusError("unknown task: " + name);
}

std::string pair_source_name(PairSource s) {
  switch (s) {
    case PairSource::ptrue: return "ptrue";
    case PairSource::se: return "se";
    case PairSource::usc: return "usc";
    case PairSource::mcqa: return "mcqa";
  }
  throw CorpusError("unknown pair source enum value");
}

PairSource pair_source_from_name(const std::string& name) {
  if (name == "ptrue") return PairSource::ptrue;
  if (name == "se") return PairSource::se;
  if (name == "usc") return PairSource::usc;
  if (name == "mcqa") return PairSource::mcqa;
  throw CorpusError("unknown pair source: " + name);
}

bool is_abstained(const std::string& text, const std::vector<std::string>& patterns) {
  std::string t = trim(text);
  for (const auto& p : patterns)
    if (t.rfind(p, 0) == 0) return true;
  return false;
}

namespace {

[[noreturn]] void bad(const std::string& field, size_t index, const std::string& why) {
  throw SchemaError("schema violation at record " + std::to_string(index) +
                        ": field \"" + field + "\" " + why,
                    field, index);
}

}  // namespace

void validate_record(const PromptRecord& r, size_t index) {
  if (r.id.empty()) bad("id", index, "must be non-empty");
  if (r.prompt.empty()) bad("prompt", index, "must be non-empty");
  if (r.task == Task::mcqa) {
    if (r.options.size() < 2) bad("options", index, "mcqa prompts need >=2 options");
  } else if (!r.options.empty()) {
    bad("options", index, "only mcqa prompts carry options");
  }
}

void validate_record(const FewshotBlock& r, size_t index) {
  if (r.id.empty()) bad("id", index, "must be non-empty");
  if (r.text.empty()) bad("text", index, "must be non-empty");
}

void validate_record(const ResponseSample& r, size_t index) {
  if (r.prompt_id.empty()) bad("prompt_id", index, "must be non-empty");
  if (r.sample_id < 0) bad("sample_id", index, "must be >= 0");
  if (!(r.temperature > 0.0)) bad("temperature", index, "must be > 0");
}

void validate_record(const AtomicClaimRecord& r, size_t index) {
  if (r.prompt_id.empty()) bad("prompt_id", index, "must be non-empty");
  if (r.sample_id < 0) bad("sample_id", index, "must be >= 0");
  if (r.claim_id < 0) bad("claim_id", index, "must be >= 0");
  if (r.claim.empty()) bad("claim", index, "must be non-empty");
  if (r.question.empty()) bad("question", index, "must be non-empty");
  if (r.question.back() != '?') bad("question", index, "must end with '?'");
}

void validate_record(const FactualityScore& r, size_t index) {
  if (r.prompt_id.empty()) bad("prompt_id", index, "must be non-empty");
  if (r.sample_id < 0) bad("sample_id", index, "must be >= 0");
  if (!(r.score >= 0.0 && r.score <= 1.0)) bad("score", index, "must lie in [0,1]");
  if (r.per_claim && !r.per_claim->empty()) {
    long double sum = 0.0L;
    for (const auto& c : *r.per_claim) {
      if (!(c.p_true >= 0.0 && c.p_true <= 1.0))
        bad("per_claim", index, "p_true must lie in [0,1]");
      sum += c.p_true;
    }
    double mean = static_cast<double>(sum / r.per_claim->size());
    if (std::fabs(mean - r.score) > 1e-12)
      bad("score", index, "must equal the mean of per_claim p_true values");
  }
}

void validate_record(const PreferencePair& r, size_t index) {
  if (r.prompt_id.empty()) bad("prompt_id", index, "must be non-empty");
  if (r.chosen_text == r.rejected_text)
    bad("chosen_text", index, "must differ from rejected_text");
  if ((r.source == PairSource::ptrue || r.source == PairSource::mcqa) &&
      !(r.chosen_score > r.rejected_score))
    bad("chosen_score", index, "must exceed rejected_score for ptrue/mcqa pairs");
}

void validate_record(const PredictionPair& r, size_t index) {
  if (r.question.empty()) bad("question", index, "must be non-empty");
  bool ab = r.positive == "A" && r.negative == "B";
  bool ba = r.positive == "B" && r.negative == "A";
  if (!ab && !ba) bad("positive", index, "labels must be {A,B} and distinct");
}

ojson record_to_json(const PromptRecord& r) {
  ojson j;
  j["id"] = r.id;
  j["task"] = task_name(r.task);
  j["prompt"] = r.prompt;
  if (r.task == Task::mcqa) j["options"] = r.options;
  if (r.golden) j["golden"] = *r.golden;
  if (r.fewshot_id) j["fewshot_id"] = *r.fewshot_id;
  return j;
}

ojson record_to_json(const FewshotBlock& r) {
  return ojson{{"id", r.id}, {"text", r.text}};
}

ojson record_to_json(const ResponseSample& r) {
  ojson j;
  j["prompt_id"] = r.prompt_id;
  j["sample_id"] = r.sample_id;
  j["text"] = r.text;
  j["temperature"] = r.temperature;
  j["backend"] = r.backend;
  j["abstained"] = r.abstained;
  return j;
}

ojson record_to_json(const AtomicClaimRecord& r) {
  ojson j;
  j["prompt_id"] = r.prompt_id;
  j["sample_id"] = r.sample_id;
  j["claim_id"] = r.claim_id;
  j["claim"] = r.claim;
  j["question"] = r.question;
  return j;
}

ojson record_to_json(const FactualityScore& r) {
  ojson j;
  j["prompt_id"] = r.prompt_id;
  j["sample_id"] = r.sample_id;
  j["score"] = r.score;
  if (r.per_claim) {
    ojson arr = ojson::array();
    for (const auto& c : *r.per_claim)
      arr.push_back(ojson{{"claim_id", c.claim_id}, {"p_true", c.p_true}});
    j["per_claim"] = std::move(arr);
  }
  if (r.flag) j["flag"] = *r.flag;
  return j;
}

ojson record_to_json(const PreferencePair& r) {
  ojson j;
  j["prompt_id"] = r.prompt_id;
  j["chosen_text"] = r.chosen_text;
  j["rejected_text"] = r.rejected_text;
  j["chosen_score"] = r.chosen_score;
  j["rejected_score"] = r.rejected_score;
  j["source"] = pair_source_name(r.source);
  return j;
}

ojson record_to_json(const PredictionPair& r) {
  ojson j;
  j["question"] = r.question;
  j["answer"] = r.answer;
  j["positive"] = r.positive;
  j["negative"] = r.negative;
  return j;
}

void record_from_json(const json& j, PromptRecord& r) {
  r.id = j.at("id").get<std::string>();
  r.task = task_from_name(j.at("task").get<std::string>());
  r.prompt = j.at("prompt").get<std::string>();
  r.options.clear();
  if (j.contains("options")) r.options = j.at("options").get<std::vector<std::string>>();
  r.golden.reset();
  if (j.contains("golden")) r.golden = j.at("golden").get<std::string>();
  r.fewshot_id.reset();
  if (j.contains("fewshot_id")) r.fewshot_id = j.at("fewshot_id").get<std::string>();
}

void record_from_json(const json& j, FewshotBlock& r) {
  r.id = j.at("id").get<std::string>();
  r.text = j.at("text").get<std::string>();
}

void record_from_json(const json& j, ResponseSample& r) {
  r.prompt_id = j.at("prompt_id").get<std::string>();
  r.sample_id = j.at("sample_id").get<int>();
  r.text = j.at("text").get<std::string>();
  r.temperature = j.at("temperature").get<double>();
  r.backend = j.at("backend").get<std::string>();
  r.abstained = j.at("abstained").get<bool>();
}

void record_from_json(const json& j, AtomicClaimRecord& r) {
  r.prompt_id = j.at("prompt_id").get<std::string>();
  r.sample_id = j.at("sample_id").get<int>();
  r.claim_id = j.at("claim_id").get<int>();
  r.claim = j.at("claim").get<std::string>();
  r.question = j.at("question").get<std::string>();
}

void record_from_json(const json& j, FactualityScore& r) {
  r.prompt_id = j.at("prompt_id").get<std::string>();
  r.sample_id = j.at("sample_id").get<int>();
  r.score = j.at("score").get<double>();
  r.per_claim.reset();
  if (j.contains("per_claim")) {
    std::vector<ClaimPTrue> pc;
    for (const auto& c : j.at("per_claim"))
      pc.push_back({c.at("claim_id").get<int>(), c.at("p_true").get<double>()});
    r.per_claim = std::move(pc);
  }
  r.flag.reset();
  if (j.contains("flag")) r.flag = j.at("flag").get<std::string>();
}

void record_from_json(const json& j, PreferencePair& r) {
  r.prompt_id = j.at("prompt_id").get<std::string>();
  r.chosen_text = j.at("chosen_text").get<std::string>();
  r.rejected_text = j.at("rejected_text").get<std::string>();
  r.chosen_score = j.at("chosen_score").get<double>();
  r.rejected_score = j.at("rejected_score").get<double>();
  r.source = pair_source_from_name(j.at("source").get<std::string>());
}

void record_from_json(const json& j, PredictionPair& r) {
  r.question = j.at("question").get<std::string>();
  r.answer = j.at("answer").get<std::string>();
  r.positive = j.at("positive").get<std::string>();
  r.negative = j.at("negative").get<std::string>();
}

std::string record_key(const PromptRecord& r) { return r.id; }
std::string record_key(const FewshotBlock& r) { return r.id; }
std::string record_key(const ResponseSample& r) {
  return r.prompt_id + "\x1f" + std::to_string(r.sample_id);
}
std::string record_key(const AtomicClaimRecord& r) {
  return r.prompt_id + "\x1f" + std::to_string(r.sample_id) + "\x1f" +
         std::to_string(r.claim_id);
}
std::string record_key(const FactualityScore& r) {
  return r.prompt_id + "\x1f" + std::to_string(r.sample_id);
}

namespace detail {

size_t write_lines(const std::string& path, const std::vector<std::string>& lines,
                   const std::vector<std::string>& keys) {
  fs::path p(path);
  if (p.has_parent_path() && !fs::exists(p.parent_path()))
    throw CorpusError("parent directory does not exist: " + p.parent_path().string());

  std::unordered_set<std::string> seen;
  // key uniqueness holds across the whole file, appends included
  if (fs::exists(p)) {
    for (const json& j : read_lines(path)) {
      if (j.contains("id"))
        seen.insert(j.at("id").get<std::string>());
      else if (j.contains("prompt_id") && j.contains("sample_id"))
        seen.insert(j.at("prompt_id").get<std::string>() + "\x1f" +
                    std::to_string(j.at("sample_id").get<int>()) +
                    (j.contains("claim_id")
                         ? "\x1f" + std::to_string(j.at("claim_id").get<int>())
                         : ""));
    }
  }
  for (size_t i = 0; i < keys.size(); ++i) {
    if (keys[i].empty()) continue;
    if (!seen.insert(keys[i]).second)
      throw SchemaError("duplicate key at record " + std::to_string(i) + " in " + path,
                        "key", i);
  }

  if (lines.empty()) return 0;  // empty batch leaves the file untouched

  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw CorpusError("cannot open for append: " + path);
  for (const auto& line : lines) out << line << '\n';
  out.flush();
  if (!out) throw CorpusError("write failed: " + path);
  return lines.size();
}

std::vector<json> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot open file: " + path);
  std::vector<json> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw LineError(path + ":" + std::to_string(line_no) + ": malformed JSON: " + e.what(),
                      line_no);
    }
  }
  return out;
}

}  // namespace detail

}  // namespace safact::corpus
