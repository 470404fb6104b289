#include "safact/selfeval.hpp"

#include "safact/util.hpp"

#include <cmath>

namespace safact::selfeval {

namespace {
constexpr const char* kInstruction =
    "Instruction: Please evaluate the truthfulness of the proposed answer based on "
    "the given question and internal knowledge.";
}

std::string assemble_true_false_prompt(const corpus::FewshotBlock& fewshot,
                                       const std::string& question,
                                       const std::string& answer) {
  std::string out;
  out.reserve(256 + fewshot.text.size() + question.size() + answer.size());
  out += kInstruction;
  out += '\n';
  out += fewshot.text;
  out += "\nQuestion: ";
  out += question;
  out += "\nProposed Answer: ";
  out += answer;
  out += "\nIs the proposed answer:\nA. True\nB. False\nThe proposed answer is:";
  return out;
}

std::vector<std::pair<std::string, double>> PolicyScorer::next_token_probs(
    const std::string& prompt) {
  // near-duplicate of the policy's internal softmax, kept local so the scorer
  // needs nothing beyond the public table
  const auto& table = snapshot_->table();
  std::vector<double> rowsum(policy::kVocab, 0.0);
  auto add_row = [&](int tok) {
    const double* row = table.data() + size_t{unsigned(tok)} * policy::kVocab;
    for (int j = 0; j < policy::kVocab; ++j) rowsum[j] += row[j];
  };
  add_row(policy::kBos);
  for (unsigned char c : prompt) add_row(int(c));
  double n = 1.0 + double(prompt.size());

  double mx = rowsum[0];
  for (double v : rowsum) mx = std::max(mx, v);
  long double z = 0.0L;
  for (int j = 0; j < policy::kVocab; ++j) z += std::exp((rowsum[j] - mx) / n);

  std::vector<std::pair<std::string, double>> out;
  out.reserve(policy::kVocab);
  for (int j = 0; j < policy::kVocab; ++j)
    out.emplace_back(policy::Tokenizer::decode_token(j),
                     double(std::exp((rowsum[j] - mx) / n) / z));
  return out;
}

std::vector<std::pair<std::string, double>> BackendScorer::next_token_probs(
    const std::string& prompt) {
  backend::ChatRequest req;
  req.model = model_;
  req.temperature = 0.0;
  req.max_tokens = 1;
  req.want_logprobs = true;
  req.top_logprobs = top_logprobs_;
  req.messages.push_back({"user", prompt});
  backend::ChatResponse resp = backend_->complete(req);
  if (!resp.token_logprobs || resp.token_logprobs->empty())
    throw SelfEvalError("backend returned no token logprobs for p_true");
  const backend::TokenLogprob& first = resp.token_logprobs->front();
  std::vector<std::pair<std::string, double>> out;
  out.emplace_back(first.token, std::exp(first.logprob));
  for (const auto& [tok, lp] : first.alternatives)
    if (tok != first.token) out.emplace_back(tok, std::exp(lp));
  return out;
}

PTrueResult p_true(Scorer& scorer, const std::string& question, const std::string& answer,
                   const corpus::FewshotBlock& fewshot) {
  if (question.empty() || answer.empty())
    throw SelfEvalError("p_true: question and answer must be non-empty");
  std::string prompt = assemble_true_false_prompt(fewshot, question, answer);
  PTrueResult r;
  for (const auto& [token, prob] : scorer.next_token_probs(prompt)) {
    std::string t = trim(token);
    if (t.rfind('A', 0) == 0)
      r.p_a_raw += prob;
    else if (t.rfind('B', 0) == 0)
      r.p_b_raw += prob;
  }
  double denom = r.p_a_raw + r.p_b_raw;
  if (!(denom > 0.0))
    throw ZeroMassError("p_true: no probability mass on either label token");
  r.p_true = r.p_a_raw / denom;
  return r;
}

corpus::FactualityScore score_short(Scorer& scorer, const corpus::PromptRecord& prompt,
                                    const corpus::ResponseSample& sample,
                                    const corpus::FewshotBlock& fewshot) {
  if (prompt.task == corpus::Task::long_form)
    throw SelfEvalError("score_short: long_form prompts go through score_long");
  if (sample.abstained) throw SelfEvalError("score_short: sample is an abstention");
  corpus::FactualityScore score;
  score.prompt_id = prompt.id;
  score.sample_id = sample.sample_id;
  score.score = p_true(scorer, prompt.prompt, sample.text, fewshot).p_true;
  return score;
}

corpus::FactualityScore score_long(Scorer& scorer, backend::Backend& claim_backend,
                                   const corpus::PromptRecord& prompt,
                                   const corpus::ResponseSample& sample,
                                   const corpus::FewshotBlock& fewshot,
                                   const LongFormOptions& options,
                                   std::vector<corpus::AtomicClaimRecord>* claims_out) {
  if (prompt.task != corpus::Task::long_form)
    throw SelfEvalError("score_long: prompt task must be long_form");

  corpus::FactualityScore score;
  score.prompt_id = prompt.id;
  score.sample_id = sample.sample_id;

  if (sample.abstained) {
    // abstentions stay in the record stream so preference building can
    // demote them
    score.score = 0.0;
    score.per_claim = std::vector<corpus::ClaimPTrue>{};
    score.flag = "abstained";
    return score;
  }

  std::vector<std::string> claims = backend::extract_claims(
      claim_backend, options.extraction_model, sample.text, options.claim_template);
  if (claims.empty()) {
    if (!options.zero_score_on_empty_claims)
      throw SelfEvalError("score_long: zero claims extracted from non-abstaining sample " +
                          prompt.id + "/" + std::to_string(sample.sample_id));
    score.score = 0.0;
    score.per_claim = std::vector<corpus::ClaimPTrue>{};
    score.flag = "no_claims";
    return score;
  }

  std::vector<corpus::ClaimPTrue> per_claim;
  long double sum = 0.0L;
  for (size_t i = 0; i < claims.size(); ++i) {
    std::string question = backend::claim_to_question(
        claim_backend, options.extraction_model, claims[i], options.question_template);
    double p = p_true(scorer, question, claims[i], fewshot).p_true;
    per_claim.push_back({int(i), p});
    sum += p;
    if (claims_out)
      claims_out->push_back({prompt.id, sample.sample_id, int(i), claims[i], question});
  }
  score.score = double(sum / per_claim.size());
  score.per_claim = std::move(per_claim);
  return score;
}

}  // namespace safact::selfeval
