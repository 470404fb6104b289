#pragma once

#include "safact/backend.hpp"
#include "safact/corpus.hpp"
#include "safact/policy.hpp"
#include "safact/sktune.hpp"

#include <string>
#include <vector>

// Step 3 of the pipeline: preference-pair construction from factuality (or
// consistency) signals, and DPO optimization against a frozen reference.

namespace safact::align {

struct AlignError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ScoredSample {
  int sample_id = 0;
  std::string text;
  double score = 0.0;
};

// Top ceil(alpha * M) by score (stable by sample_id) against the rest; every
// cross pair except those with equal scores.
std::vector<corpus::PreferencePair> build_preferences(const std::string& prompt_id,
                                                      std::vector<ScoredSample> samples,
                                                      double alpha,
                                                      std::vector<std::string>* warnings = nullptr);

// Transitive-closure clustering over bidirectional entailment; members of the
// largest cluster (ties: lowest minimum sample_id) are preferred. Scores on
// the emitted pairs are cluster sizes.
std::vector<corpus::PreferencePair> build_preferences_se(const std::string& prompt_id,
                                                         const std::vector<ScoredSample>& responses,
                                                         sktune::EntailmentOracle& oracle,
                                                         std::vector<std::string>* warnings = nullptr);

// Like SE but the preferred cluster is the one holding the judge-selected
// most consistent response.
std::vector<corpus::PreferencePair> build_preferences_usc(const std::string& prompt_id,
                                                          const std::vector<ScoredSample>& responses,
                                                          backend::Backend& judge,
                                                          const std::string& judge_model,
                                                          const std::string& judge_template,
                                                          sktune::EntailmentOracle& oracle,
                                                          std::vector<std::string>* warnings = nullptr);

// MCQA reformulation: the top-scoring option's True/False prompt plus label
// "A" is chosen against every other option's prompt plus label "B". A tie at
// the top yields no pairs.
std::vector<corpus::PreferencePair> build_mcqa_preferences(const corpus::PromptRecord& prompt,
                                                           const std::vector<double>& option_scores,
                                                           const corpus::FewshotBlock& fewshot,
                                                           std::vector<std::string>* warnings = nullptr);

// Connected components under bidirectional entailment; returns a cluster id
// per input index.
std::vector<int> cluster_by_equivalence(const std::vector<std::string>& texts,
                                        sktune::EntailmentOracle& oracle);

// DPO training example with the prompt text resolved.
struct DpoExample {
  std::string prompt;
  std::string chosen;
  std::string rejected;
};

// Joins persisted pairs with prompt texts. MCQA pairs embed their full
// sequence, so their prompt is empty.
std::vector<DpoExample> to_dpo_examples(const std::vector<corpus::PreferencePair>& pairs,
                                        const std::function<std::string(const std::string&)>&
                                            prompt_text_for_id);

// -mean log sigma(beta * ((log pi - log ref)(chosen) - (log pi - log ref)(rejected)))
double dpo_loss(const policy::PolicySnapshot& policy, const policy::PolicySnapshot& reference,
                const std::vector<DpoExample>& batch, double beta);

std::vector<double> dpo_loss_grad(const policy::PolicySnapshot& policy,
                                  const policy::PolicySnapshot& reference,
                                  const std::vector<DpoExample>& batch, double beta);

// beta * ((log pi - log ref)(chosen) - (log pi - log ref)(rejected)), averaged.
double mean_implicit_reward_margin(const policy::PolicySnapshot& policy,
                                   const policy::PolicySnapshot& reference,
                                   const std::vector<DpoExample>& batch, double beta);

struct DpoConfig {
  double beta = 0.1;
  int epochs = 5;
  int batch_size = 8;
  double lr = 5e-6;
  uint64_t seed = 0;
  std::string trace_path;  // optional CSV: step,loss,mean_margin
};

// Mini-batch gradient descent on dpo_loss; the reference never receives
// gradient. Deterministic in seed.
policy::PolicySnapshot dpo_train(const policy::PolicySnapshot& start,
                                 const policy::PolicySnapshot& reference,
                                 const std::vector<DpoExample>& pairs, const DpoConfig& config);

}  // namespace safact::align
