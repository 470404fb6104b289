#pragma once

#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

// Chat-completion clients used for claim extraction, question generation and
// consistency judging: an OpenAI-compatible HTTP client with retry/backoff,
// and a fixture-backed deterministic mock for offline runs.

namespace safact::backend {

struct BackendError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FixtureMissError : BackendError {
  using BackendError::BackendError;
};
struct JudgeParseError : BackendError {
  using BackendError::BackendError;
};

struct ChatMessage {
  std::string role;  // system | user | assistant
  std::string content;
};

struct ChatRequest {
  std::string model;
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  int max_tokens = 256;
  bool want_logprobs = false;
  int top_logprobs = 0;  // 0..20
};

struct TokenLogprob {
  std::string token;
  double logprob = 0.0;
  std::vector<std::pair<std::string, double>> alternatives;
};

struct ChatResponse {
  std::string text;
  std::optional<std::vector<TokenLogprob>> token_logprobs;
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual ChatResponse complete(const ChatRequest& request) = 0;
};

// SHA-256 of the canonical-JSON encoding of the request. Fixture key and
// trace correlation id.
std::string canonical_request_json(const ChatRequest& request);
std::string request_hash(const ChatRequest& request);
std::string sha256_hex(std::string_view data);

struct HttpConfig {
  std::string base_url;           // e.g. http://localhost:8080/v1
  std::string api_key_env;        // env var holding the bearer token
  int max_retries = 4;            // on 429/5xx
  int backoff_base_ms = 250;      // doubled per attempt
  int max_inflight = 4;
  std::string trace_path;         // optional request/response JSONL log
};

class HttpBackend : public Backend {
 public:
  explicit HttpBackend(HttpConfig config);
  ChatResponse complete(const ChatRequest& request) override;
  int last_retry_count() const { return last_retries_; }

 private:
  HttpConfig config_;
  int last_retries_ = 0;
};

// Maps request_hash -> canned response, loaded from a fixtures JSONL file
// ({"request_hash": ..., "response": {"text": ..., "token_logprobs": [...]}}).
class MockBackend : public Backend {
 public:
  explicit MockBackend(const std::string& fixtures_path, std::string trace_path = {});
  ChatResponse complete(const ChatRequest& request) override;

  // Helper for building fixture files from (request, response) pairs.
  static void write_fixture(const std::string& fixtures_path, const ChatRequest& request,
                            const ChatResponse& response);

 private:
  struct Impl;
  std::shared_ptr<Impl> impl_;
};

// Runs requests with at most `max_inflight` concurrent calls; responses come
// back in request order.
std::vector<ChatResponse> complete_many(Backend& backend,
                                        const std::vector<ChatRequest>& requests,
                                        int max_inflight = 4);

// One claim per returned line; leading "- ", "* " or "N. " markers stripped.
// Throws on abstaining input; an empty extraction returns an empty list and
// is the caller's policy decision.
std::vector<std::string> extract_claims(Backend& backend, const std::string& model,
                                        const std::string& response_text,
                                        const std::string& prompt_template);

// One interrogative sentence, "?" appended when the model leaves it off.
std::string claim_to_question(Backend& backend, const std::string& model,
                              const std::string& claim,
                              const std::string& prompt_template);

// Universal self-consistency judging: the judge sees all candidates (1-based
// in the prompt) and we parse its selected index back to 0-based.
size_t usc_select(Backend& backend, const std::string& model,
                  const std::vector<std::string>& responses,
                  const std::string& prompt_template);

}  // namespace safact::backend
