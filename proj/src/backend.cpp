#include "safact/backend.hpp"

#include "safact/corpus.hpp"
#include "safact/util.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <thread>
#include <unordered_map>

namespace safact::backend {

using json = nlohmann::json;

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr))
    throw BackendError("sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(size_t{len} * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

std::string canonical_request_json(const ChatRequest& request) {
  // json (not ordered_json) sorts keys, which makes dump() canonical
  json msgs = json::array();
  for (const auto& m : request.messages)
    msgs.push_back(json{{"role", m.role}, {"content", m.content}});
  json j{{"model", request.model},
         {"messages", std::move(msgs)},
         {"temperature", request.temperature},
         {"max_tokens", request.max_tokens},
         {"want_logprobs", request.want_logprobs},
         {"top_logprobs", request.top_logprobs}};
  return j.dump();
}

std::string request_hash(const ChatRequest& request) {
  return sha256_hex(canonical_request_json(request));
}

namespace {

json response_to_json(const ChatResponse& r) {
  json j{{"text", r.text}};
  if (r.token_logprobs) {
    json arr = json::array();
    for (const auto& t : *r.token_logprobs) {
      json alts = json::array();
      for (const auto& [tok, lp] : t.alternatives) alts.push_back(json{tok, lp});
      arr.push_back(json{{"token", t.token}, {"logprob", t.logprob}, {"alternatives", alts}});
    }
    j["token_logprobs"] = std::move(arr);
  }
  return j;
}

ChatResponse response_from_json(const json& j) {
  ChatResponse r;
  r.text = j.at("text").get<std::string>();
  if (j.contains("token_logprobs")) {
    std::vector<TokenLogprob> lps;
    for (const auto& t : j.at("token_logprobs")) {
      TokenLogprob lp;
      lp.token = t.at("token").get<std::string>();
      lp.logprob = t.at("logprob").get<double>();
      if (t.contains("alternatives"))
        for (const auto& a : t.at("alternatives"))
          lp.alternatives.emplace_back(a.at(0).get<std::string>(), a.at(1).get<double>());
      lps.push_back(std::move(lp));
    }
    r.token_logprobs = std::move(lps);
  }
  return r;
}

std::mutex g_trace_mutex;

void trace(const std::string& path, const ChatRequest& req, const ChatResponse& resp,
           int attempts) {
  if (path.empty()) return;
  json entry{{"request_hash", request_hash(req)},
             {"request", json::parse(canonical_request_json(req))},
             {"response", response_to_json(resp)},
             {"attempts", attempts}};
  std::lock_guard<std::mutex> lock(g_trace_mutex);
  std::ofstream out(path, std::ios::app | std::ios::binary);
  out << entry.dump() << '\n';
}

}  // namespace

HttpBackend::HttpBackend(HttpConfig config) : config_(std::move(config)) {
  if (config_.base_url.empty()) throw BackendError("http backend needs a base_url");
}

ChatResponse HttpBackend::complete(const ChatRequest& request) {
  // split base_url into host part and path prefix
  std::string url = config_.base_url;
  std::string scheme_host = url;
  std::string prefix;
  size_t scheme = url.find("://");
  size_t slash = url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
  if (slash != std::string::npos) {
    scheme_host = url.substr(0, slash);
    prefix = url.substr(slash);
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  }

  json msgs = json::array();
  for (const auto& m : request.messages)
    msgs.push_back(json{{"role", m.role}, {"content", m.content}});
  json body{{"model", request.model},
            {"messages", std::move(msgs)},
            {"temperature", request.temperature},
            {"max_tokens", request.max_tokens}};
  if (request.want_logprobs) {
    body["logprobs"] = true;
    body["top_logprobs"] = request.top_logprobs;
  }

  httplib::Headers headers;
  if (!config_.api_key_env.empty()) {
    const char* key = std::getenv(config_.api_key_env.c_str());
    if (!key) throw BackendError("api key env var not set: " + config_.api_key_env);
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }

  httplib::Client client(scheme_host);
  client.set_read_timeout(120, 0);

  std::string payload = body.dump();
  last_retries_ = 0;
  std::string last_error;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 0) {
      ++last_retries_;
      std::this_thread::sleep_for(
          std::chrono::milliseconds(config_.backoff_base_ms << (attempt - 1)));
    }
    auto res = client.Post(prefix + "/chat/completions", headers, payload, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "status " + std::to_string(res->status) + ": " + res->body;
      continue;
    }
    if (res->status < 200 || res->status >= 300)
      throw BackendError("chat completion failed with status " +
                         std::to_string(res->status) + ": " + res->body);
    json j = json::parse(res->body);
    const json& choice = j.at("choices").at(0);
    ChatResponse out;
    out.text = choice.at("message").at("content").get<std::string>();
    if (choice.contains("logprobs") && !choice.at("logprobs").is_null()) {
      std::vector<TokenLogprob> lps;
      for (const auto& t : choice.at("logprobs").at("content")) {
        TokenLogprob lp;
        lp.token = t.at("token").get<std::string>();
        lp.logprob = t.at("logprob").get<double>();
        if (t.contains("top_logprobs"))
          for (const auto& a : t.at("top_logprobs"))
            lp.alternatives.emplace_back(a.at("token").get<std::string>(),
                                         a.at("logprob").get<double>());
        lps.push_back(std::move(lp));
      }
      out.token_logprobs = std::move(lps);
    }
    trace(config_.trace_path, request, out, last_retries_ + 1);
    return out;
  }
  throw BackendError("chat completion failed after " +
                     std::to_string(config_.max_retries + 1) + " attempts; last: " +
                     last_error);
}

struct MockBackend::Impl {
  std::unordered_map<std::string, ChatResponse> fixtures;
  std::string trace_path;
};

MockBackend::MockBackend(const std::string& fixtures_path, std::string trace_path)
    : impl_(std::make_shared<Impl>()) {
  impl_->trace_path = std::move(trace_path);
  std::ifstream in(fixtures_path, std::ios::binary);
  if (!in) throw BackendError("cannot open fixtures file: " + fixtures_path);
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw BackendError(fixtures_path + ":" + std::to_string(line_no) +
                         ": malformed fixture: " + e.what());
    }
    impl_->fixtures[j.at("request_hash").get<std::string>()] =
        response_from_json(j.at("response"));
  }
}

ChatResponse MockBackend::complete(const ChatRequest& request) {
  std::string hash = request_hash(request);
  auto it = impl_->fixtures.find(hash);
  if (it == impl_->fixtures.end())
    throw FixtureMissError("no fixture for request hash " + hash +
                           " (model=" + request.model + ")");
  trace(impl_->trace_path, request, it->second, 1);
  return it->second;
}

void MockBackend::write_fixture(const std::string& fixtures_path, const ChatRequest& request,
                                const ChatResponse& response) {
  json entry{{"request_hash", request_hash(request)},
             {"response", response_to_json(response)}};
  std::ofstream out(fixtures_path, std::ios::app | std::ios::binary);
  if (!out) throw BackendError("cannot open fixtures file for append: " + fixtures_path);
  out << entry.dump() << '\n';
}

std::vector<ChatResponse> complete_many(Backend& backend,
                                        const std::vector<ChatRequest>& requests,
                                        int max_inflight) {
  if (max_inflight < 1) max_inflight = 1;
  std::vector<ChatResponse> responses(requests.size());
  std::vector<std::string> errors(requests.size());
  std::atomic<size_t> next{0};
  auto worker = [&] {
    for (;;) {
      size_t i = next.fetch_add(1);
      if (i >= requests.size()) return;
      try {
        responses[i] = backend.complete(requests[i]);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  size_t n_threads = std::min<size_t>(size_t(max_inflight), requests.size());
  std::vector<std::thread> threads;
  for (size_t t = 0; t < n_threads; ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  for (size_t i = 0; i < errors.size(); ++i)
    if (!errors[i].empty())
      throw BackendError("request " + std::to_string(i) + " failed: " + errors[i]);
  return responses;
}

namespace {

std::string apply_template(std::string tmpl, const std::string& key,
                           const std::string& value) {
  std::string marker = "{" + key + "}";
  size_t pos;
  while ((pos = tmpl.find(marker)) != std::string::npos)
    tmpl.replace(pos, marker.size(), value);
  return tmpl;
}

ChatRequest make_request(const std::string& model, const std::string& content) {
  ChatRequest req;
  req.model = model;
  req.temperature = 0.0;  // deterministic extraction
  req.messages.push_back({"user", content});
  return req;
}

std::string strip_list_marker(const std::string& line) {
  std::string t = trim(line);
  if (t.rfind("- ", 0) == 0) return trim(t.substr(2));
  if (t.rfind("* ", 0) == 0) return trim(t.substr(2));
  size_t i = 0;
  while (i < t.size() && std::isdigit(static_cast<unsigned char>(t[i]))) ++i;
  if (i > 0 && i + 1 < t.size() && (t[i] == '.' || t[i] == ')') && t[i + 1] == ' ')
    return trim(t.substr(i + 2));
  return t;
}

}  // namespace

std::vector<std::string> extract_claims(Backend& backend, const std::string& model,
                                        const std::string& response_text,
                                        const std::string& prompt_template) {
  if (corpus::is_abstained(response_text))
    throw BackendError("extract_claims: input is an abstaining response");
  ChatResponse resp = backend.complete(
      make_request(model, apply_template(prompt_template, "text", response_text)));
  std::vector<std::string> claims;
  for (const auto& line : split_lines(resp.text)) {
    std::string claim = strip_list_marker(line);
    if (!claim.empty()) claims.push_back(std::move(claim));
  }
  return claims;
}

std::string claim_to_question(Backend& backend, const std::string& model,
                              const std::string& claim,
                              const std::string& prompt_template) {
  if (trim(claim).empty()) throw BackendError("claim_to_question: empty claim");
  ChatResponse resp =
      backend.complete(make_request(model, apply_template(prompt_template, "claim", claim)));
  std::string q = trim(resp.text);
  if (q.empty()) throw BackendError("claim_to_question: empty response for claim: " + claim);
  if (q.back() != '?') q.push_back('?');
  return q;
}

size_t usc_select(Backend& backend, const std::string& model,
                  const std::vector<std::string>& responses,
                  const std::string& prompt_template) {
  if (responses.size() < 2) throw BackendError("usc_select: need >= 2 responses");
  std::string listing;
  for (size_t i = 0; i < responses.size(); ++i)
    listing += "Response " + std::to_string(i + 1) + ": " + responses[i] + "\n";
  ChatResponse resp = backend.complete(
      make_request(model, apply_template(prompt_template, "responses", listing)));

  // accept "Answer: N" or a bare trailing integer, 1-based
  const std::string& text = resp.text;
  long value = -1;
  for (size_t i = 0; i < text.size(); ++i) {
    if (std::isdigit(static_cast<unsigned char>(text[i]))) {
      size_t end = i;
      while (end < text.size() && std::isdigit(static_cast<unsigned char>(text[end]))) ++end;
      value = std::stol(text.substr(i, end - i));
      i = end;
    }
  }
  if (value < 1 || size_t(value) > responses.size())
    throw JudgeParseError("usc_select: cannot parse a valid index from judge output: " +
                          text);
  return size_t(value - 1);
}

}  // namespace safact::backend
