#include <doctest.h>

#include "safact/backend.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <thread>

using namespace safact;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string temp_file(const std::string& stem) {
  return (fs::temp_directory_path() /
          (stem + "_" + std::to_string(std::random_device{}()) + ".jsonl"))
      .string();
}

backend::ChatRequest simple_request(const std::string& content) {
  backend::ChatRequest req;
  req.model = "test-model";
  req.messages.push_back({"user", content});
  return req;
}

}  // namespace

TEST_CASE("request hash is canonical and stable") {
  auto a = simple_request("hello");
  auto b = simple_request("hello");
  CHECK(backend::request_hash(a) == backend::request_hash(b));
  b.temperature = 0.5;
  CHECK(backend::request_hash(a) != backend::request_hash(b));
  CHECK(backend::request_hash(a).size() == 64);
  // known vector for the hash primitive itself
  CHECK(backend::sha256_hex("abc") ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("mock backend replays fixtures and misses loudly") {
  std::string path = temp_file("safact_fixtures");
  auto req = simple_request("What is water made of?");
  backend::ChatResponse canned;
  canned.text = "Hydrogen and oxygen.";
  backend::MockBackend::write_fixture(path, req, canned);

  backend::MockBackend mock(path);
  auto got = mock.complete(req);
  CHECK(got.text == canned.text);
  CHECK(!got.token_logprobs.has_value());

  auto other = simple_request("unknown");
  CHECK_THROWS_AS(mock.complete(other), backend::FixtureMissError);
  fs::remove(path);
}

TEST_CASE("fixture round-trip preserves token logprobs") {
  std::string path = temp_file("safact_fixtures_lp");
  auto req = simple_request("judge this");
  req.want_logprobs = true;
  req.top_logprobs = 5;
  req.max_tokens = 1;
  backend::ChatResponse canned;
  canned.text = "A";
  backend::TokenLogprob tl;
  tl.token = "A";
  tl.logprob = -0.105360515657826;
  tl.alternatives = {{"A", -0.105360515657826}, {"B", -2.302585092994046}};
  canned.token_logprobs = std::vector<backend::TokenLogprob>{tl};
  backend::MockBackend::write_fixture(path, req, canned);

  backend::MockBackend mock(path);
  auto got = mock.complete(req);
  REQUIRE(got.token_logprobs.has_value());
  REQUIRE(got.token_logprobs->size() == 1);
  CHECK((*got.token_logprobs)[0].logprob == tl.logprob);
  REQUIRE((*got.token_logprobs)[0].alternatives.size() == 2);
  CHECK((*got.token_logprobs)[0].alternatives[1].first == "B");
  fs::remove(path);
}

TEST_CASE("complete_many keeps request order under concurrency") {
  std::string path = temp_file("safact_fixtures_many");
  std::vector<backend::ChatRequest> reqs;
  for (int i = 0; i < 24; ++i) {
    auto req = simple_request("q" + std::to_string(i));
    backend::ChatResponse resp;
    resp.text = "r" + std::to_string(i);
    backend::MockBackend::write_fixture(path, req, resp);
    reqs.push_back(req);
  }
  backend::MockBackend mock(path);
  auto out = backend::complete_many(mock, reqs, 4);
  REQUIRE(out.size() == 24);
  for (int i = 0; i < 24; ++i) CHECK(out[i].text == "r" + std::to_string(i));
  fs::remove(path);
}

TEST_CASE("http backend retries 5xx then succeeds") {
  std::atomic<int> calls{0};
  httplib::Server server;
  server.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    int n = ++calls;
    if (n <= 2) {
      res.status = 503;
      res.set_content("overloaded", "text/plain");
      return;
    }
    json body{{"choices",
               json::array({json{{"message", json{{"role", "assistant"},
                                                  {"content", "pong"}}}}})}};
    res.set_content(body.dump(), "application/json");
  });
  int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  backend::HttpConfig cfg;
  cfg.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1";
  cfg.max_retries = 4;
  cfg.backoff_base_ms = 1;
  backend::HttpBackend http(cfg);
  auto resp = http.complete(simple_request("ping"));
  CHECK(resp.text == "pong");
  CHECK(http.last_retry_count() == 2);
  CHECK(calls == 3);

  server.stop();
  t.join();
}

TEST_CASE("http backend gives up after max retries") {
  httplib::Server server;
  server.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    res.status = 429;
    res.set_content("slow down", "text/plain");
  });
  int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  backend::HttpConfig cfg;
  cfg.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1";
  cfg.max_retries = 2;
  cfg.backoff_base_ms = 1;
  backend::HttpBackend http(cfg);
  CHECK_THROWS_AS(http.complete(simple_request("ping")), backend::BackendError);
  CHECK(http.last_retry_count() == 2);

  server.stop();
  t.join();
}

TEST_CASE("claim extraction strips list markers and rejects abstentions") {
  std::string path = temp_file("safact_fixtures_claims");
  std::string tmpl = "Break into atomic claims:\n{text}";
  auto req = simple_request("Break into atomic claims:\nShe was born in Kyoto in 1970.");
  backend::ChatResponse resp;
  resp.text = "- She was born in Kyoto.\n2. She was born in 1970.\n\n* End.";
  backend::MockBackend::write_fixture(path, req, resp);

  backend::MockBackend mock(path);
  auto claims =
      backend::extract_claims(mock, "test-model", "She was born in Kyoto in 1970.", tmpl);
  REQUIRE(claims.size() == 3);
  CHECK(claims[0] == "She was born in Kyoto.");
  CHECK(claims[1] == "She was born in 1970.");
  CHECK(claims[2] == "End.");

  CHECK_THROWS_AS(backend::extract_claims(mock, "test-model", "I have no comment.", tmpl),
                  backend::BackendError);
  fs::remove(path);
}

TEST_CASE("claim_to_question appends the missing question mark") {
  std::string path = temp_file("safact_fixtures_q");
  std::string tmpl = "Question for: {claim}";
  auto req = simple_request("Question for: The sky is blue");
  backend::ChatResponse resp;
  resp.text = "  What color is the sky  ";
  backend::MockBackend::write_fixture(path, req, resp);

  backend::MockBackend mock(path);
  CHECK(backend::claim_to_question(mock, "test-model", "The sky is blue", tmpl) ==
        "What color is the sky?");
  CHECK_THROWS_AS(backend::claim_to_question(mock, "test-model", "  ", tmpl),
                  backend::BackendError);
  fs::remove(path);
}

TEST_CASE("usc_select parses the final index and bounds-checks it") {
  std::string tmpl = "Pick the most consistent:\n{responses}";
  std::vector<std::string> responses = {"Paris", "London", "Paris"};
  std::string listing;
  for (size_t i = 0; i < responses.size(); ++i)
    listing += "Response " + std::to_string(i + 1) + ": " + responses[i] + "\n";
  auto req = simple_request("Pick the most consistent:\n" + listing);

  SUBCASE("verbose judge output") {
    std::string path = temp_file("safact_fixtures_usc1");
    backend::ChatResponse resp;
    resp.text = "Considering all 3 responses, the most consistent is Response 3";
    backend::MockBackend::write_fixture(path, req, resp);
    backend::MockBackend mock(path);
    CHECK(backend::usc_select(mock, "test-model", responses, tmpl) == 2);
    fs::remove(path);
  }
  SUBCASE("out-of-range index") {
    std::string path = temp_file("safact_fixtures_usc2");
    backend::ChatResponse resp;
    resp.text = "Response 7";
    backend::MockBackend::write_fixture(path, req, resp);
    backend::MockBackend mock(path);
    CHECK_THROWS_AS(backend::usc_select(mock, "test-model", responses, tmpl),
                    backend::JudgeParseError);
    fs::remove(path);
  }
  SUBCASE("no digits at all") {
    std::string path = temp_file("safact_fixtures_usc3");
    backend::ChatResponse resp;
    resp.text = "the first one";
    backend::MockBackend::write_fixture(path, req, resp);
    backend::MockBackend mock(path);
    CHECK_THROWS_AS(backend::usc_select(mock, "test-model", responses, tmpl),
                    backend::JudgeParseError);
    fs::remove(path);
  }
}
