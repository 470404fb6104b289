#pragma once

#include "safact/corpus.hpp"
#include "safact/policy.hpp"

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

// SK-Tuning: build self-knowledge-guided True/False training pairs by
// checking sampled answers against golden ones with bidirectional entailment,
// then train the self-evaluator with the pairwise logistic objective.

namespace safact::sktune {

struct SkTuneError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EntailmentVerdict {
  bool forward = false;   // candidate entails golden
  bool backward = false;  // golden entails candidate
  bool equivalent = false;
};

class EntailmentOracle {
 public:
  virtual ~EntailmentOracle() = default;
  virtual bool entails(const std::string& premise, const std::string& hypothesis) = 0;
};

// Offline test oracle: lowercase, strip punctuation and articles, compare.
class NormalizedMatchOracle : public EntailmentOracle {
 public:
  bool entails(const std::string& premise, const std::string& hypothesis) override;
  static std::string normalize(const std::string& text);
};

EntailmentVerdict check_equivalence(EntailmentOracle& oracle, const std::string& candidate,
                                    const std::string& golden);

struct SkBuildConfig {
  int k_samples = 30;
  int fewshot_shots = 10;
  double temperature = 1.0;
  bool keep_duplicates = true;  // duplicates approximate the model's own correctness rate
};

// Produces the k-th candidate answer for a prompt.
using AnswerSampler = std::function<std::string(const corpus::PromptRecord&, int)>;

// One PredictionPair per sampled answer: positive "A" for answers equivalent
// to the golden one, positive "B" otherwise. The question field carries the
// assembled True/False prompt body.
std::vector<corpus::PredictionPair> build_sk_data(const AnswerSampler& sampler,
                                                  const std::vector<corpus::PromptRecord>& prompts,
                                                  EntailmentOracle& oracle,
                                                  const corpus::FewshotBlock& tf_fewshot,
                                                  const SkBuildConfig& config);

// -mean log sigma(log pi(r+ | q) - log pi(r- | q)) with one-token labels.
double sk_loss(const policy::PolicySnapshot& policy,
               const std::vector<corpus::PredictionPair>& batch);

// d sk_loss / d table, flattened (kVocab * kVocab).
std::vector<double> sk_loss_grad(const policy::PolicySnapshot& policy,
                                 const std::vector<corpus::PredictionPair>& batch);

struct SkTrainConfig {
  int epochs = 1;
  int batch_size = 8;
  double lr = 5e-7;
  uint64_t seed = 0;
  std::string trace_path;  // optional CSV: step,loss
};

// Mini-batch gradient descent on sk_loss; deterministic in seed. The input
// snapshot is never mutated.
policy::PolicySnapshot sk_train(const policy::PolicySnapshot& start,
                                const std::vector<corpus::PredictionPair>& pairs,
                                const SkTrainConfig& config);

// stable log(sigmoid(x))
double log_sigmoid(double x);

}  // namespace safact::sktune
