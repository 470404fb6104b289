#pragma once

#include "safact/backend.hpp"
#include "safact/corpus.hpp"
#include "safact/policy.hpp"

#include <memory>
#include <string>
#include <vector>

// The Self-Eval factuality estimator: assemble the True/False Q&A prompt,
// read p(True) off the next-token distribution, and run the long-form
// average-p(True) pipeline over atomic claims.

namespace safact::selfeval {

struct SelfEvalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// p_a_raw + p_b_raw == 0; the caller decides the fallback.
struct ZeroMassError : SelfEvalError {
  using SelfEvalError::SelfEvalError;
};

// Byte-exact True/False prompt body.
std::string assemble_true_false_prompt(const corpus::FewshotBlock& fewshot,
                                       const std::string& question,
                                       const std::string& answer);

struct PTrueResult {
  double p_true = 0.0;
  double p_a_raw = 0.0;
  double p_b_raw = 0.0;
};

// Next-token distribution provider behind p_true. Entries are (decoded token
// text, probability).
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual std::vector<std::pair<std::string, double>> next_token_probs(
      const std::string& prompt) = 0;
};

// Exact softmax over the reference policy's vocabulary.
class PolicyScorer : public Scorer {
 public:
  explicit PolicyScorer(const policy::PolicySnapshot& snapshot) : snapshot_(&snapshot) {}
  std::vector<std::pair<std::string, double>> next_token_probs(
      const std::string& prompt) override;

 private:
  const policy::PolicySnapshot* snapshot_;
};

// Remote model via returned top logprobs on the first completion token.
class BackendScorer : public Scorer {
 public:
  BackendScorer(backend::Backend& b, std::string model, int top_logprobs = 20)
      : backend_(&b), model_(std::move(model)), top_logprobs_(top_logprobs) {}
  std::vector<std::pair<std::string, double>> next_token_probs(
      const std::string& prompt) override;

 private:
  backend::Backend* backend_;
  std::string model_;
  int top_logprobs_;
};

// p(True | q, a): mass of tokens whose trimmed decoding starts with "A",
// normalized against the "B" mass.
PTrueResult p_true(Scorer& scorer, const std::string& question, const std::string& answer,
                   const corpus::FewshotBlock& fewshot);

// Short-form / MCQA factuality: one p_true call on the raw response.
corpus::FactualityScore score_short(Scorer& scorer, const corpus::PromptRecord& prompt,
                                    const corpus::ResponseSample& sample,
                                    const corpus::FewshotBlock& fewshot);

struct LongFormOptions {
  // default: zero extracted claims on non-abstaining text is an error
  bool zero_score_on_empty_claims = false;
  std::string extraction_model = "gpt-3.5-turbo";
  std::string claim_template = "List the atomic claims in the following text, "
                               "one per line:\n{text}";
  std::string question_template = "Write one question that tests the fact stated "
                                  "below. Answer with the question only.\n{claim}";
};

// Avg-p(True): extract claims, turn each into its atomic question, score each
// claim and average. Abstained samples score 0 with an empty claim list and
// the "abstained" flag.
corpus::FactualityScore score_long(Scorer& scorer, backend::Backend& claim_backend,
                                   const corpus::PromptRecord& prompt,
                                   const corpus::ResponseSample& sample,
                                   const corpus::FewshotBlock& fewshot,
                                   const LongFormOptions& options = {},
                                   std::vector<corpus::AtomicClaimRecord>* claims_out = nullptr);

}  // namespace safact::selfeval
