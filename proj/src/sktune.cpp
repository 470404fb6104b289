#include "safact/sktune.hpp"

#include "safact/selfeval.hpp"
#include "safact/util.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

namespace safact::sktune {

double log_sigmoid(double x) {
  if (x >= 0.0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

std::string NormalizedMatchOracle::normalize(const std::string& text) {
  std::string cleaned;
  cleaned.reserve(text.size());
  for (unsigned char c : text) {
    if (std::isalnum(c))
      cleaned.push_back(char(std::tolower(c)));
    else if (std::isspace(c) || std::ispunct(c))
      cleaned.push_back(' ');
    else
      cleaned.push_back(char(std::tolower(c)));
  }
  std::istringstream words(cleaned);
  std::string word, out;
  while (words >> word) {
    if (word == "a" || word == "an" || word == "the") continue;
    if (!out.empty()) out.push_back(' ');
    out += word;
  }
  return out;
}

bool NormalizedMatchOracle::entails(const std::string& premise, const std::string& hypothesis) {
  return normalize(premise) == normalize(hypothesis);
}

EntailmentVerdict check_equivalence(EntailmentOracle& oracle, const std::string& candidate,
                                    const std::string& golden) {
  if (candidate.empty() || golden.empty())
    throw SkTuneError("check_equivalence: candidate and golden must be non-empty");
  EntailmentVerdict v;
  try {
    v.forward = oracle.entails(candidate, golden);
    v.backward = oracle.entails(golden, candidate);
  } catch (const std::exception& e) {
    throw SkTuneError(std::string("entailment oracle failed on (\"") + candidate +
                      "\", \"" + golden + "\"): " + e.what());
  }
  v.equivalent = v.forward && v.backward;
  return v;
}

std::vector<corpus::PredictionPair> build_sk_data(const AnswerSampler& sampler,
                                                  const std::vector<corpus::PromptRecord>& prompts,
                                                  EntailmentOracle& oracle,
                                                  const corpus::FewshotBlock& tf_fewshot,
                                                  const SkBuildConfig& config) {
  if (config.k_samples < 1) throw SkTuneError("build_sk_data: k_samples must be >= 1");
  std::vector<corpus::PredictionPair> pairs;
  for (const auto& prompt : prompts) {
    if (!prompt.golden)
      throw SkTuneError("build_sk_data: prompt " + prompt.id + " has no golden answer");
    std::set<std::pair<std::string, bool>> seen;
    for (int k = 0; k < config.k_samples; ++k) {
      std::string answer = sampler(prompt, k);
      if (answer.empty()) continue;  // nothing to judge
      bool correct = check_equivalence(oracle, answer, *prompt.golden).equivalent;
      if (!config.keep_duplicates && !seen.insert({answer, correct}).second) continue;
      corpus::PredictionPair pair;
      pair.question = selfeval::assemble_true_false_prompt(tf_fewshot, prompt.prompt, answer);
      pair.answer = answer;
      pair.positive = correct ? "A" : "B";
      pair.negative = correct ? "B" : "A";
      pairs.push_back(std::move(pair));
    }
  }
  return pairs;
}

double sk_loss(const policy::PolicySnapshot& policy,
               const std::vector<corpus::PredictionPair>& batch) {
  if (batch.empty()) throw SkTuneError("sk_loss: batch must be non-empty");
  long double total = 0.0L;
  for (const auto& pair : batch) {
    double gap = policy::log_prob(policy, pair.question, pair.positive) -
                 policy::log_prob(policy, pair.question, pair.negative);
    total -= log_sigmoid(gap);
  }
  return double(total / batch.size());
}

std::vector<double> sk_loss_grad(const policy::PolicySnapshot& policy,
                                 const std::vector<corpus::PredictionPair>& batch) {
  if (batch.empty()) throw SkTuneError("sk_loss_grad: batch must be non-empty");
  std::vector<double> grad(size_t{policy::kVocab} * policy::kVocab, 0.0);
  const double inv_n = 1.0 / double(batch.size());
  for (const auto& pair : batch) {
    double gap = policy::log_prob(policy, pair.question, pair.positive) -
                 policy::log_prob(policy, pair.question, pair.negative);
    double coeff = -(1.0 - 1.0 / (1.0 + std::exp(-gap))) * inv_n;
    std::vector<double> gp = policy::log_prob_grad(policy, pair.question, pair.positive);
    std::vector<double> gn = policy::log_prob_grad(policy, pair.question, pair.negative);
    for (size_t i = 0; i < grad.size(); ++i) grad[i] += coeff * (gp[i] - gn[i]);
  }
  return grad;
}

policy::PolicySnapshot sk_train(const policy::PolicySnapshot& start,
                                const std::vector<corpus::PredictionPair>& pairs,
                                const SkTrainConfig& config) {
  if (pairs.empty()) throw SkTuneError("sk_train: no prediction pairs");
  if (!(config.lr > 0.0)) throw SkTuneError("sk_train: lr must be > 0");

  policy::PolicySnapshot current = start;
  std::mt19937_64 rng(config.seed);
  std::ofstream trace;
  if (!config.trace_path.empty()) {
    trace.open(config.trace_path, std::ios::trunc);
    trace << "step,loss\n";
  }

  std::vector<size_t> order(pairs.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  size_t step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    // Fisher-Yates with our own draws; std::shuffle is not portable across
    // standard libraries
    for (size_t i = order.size(); i > 1; --i) {
      size_t j = size_t(policy::u01(rng()) * double(i));
      if (j >= i) j = i - 1;
      std::swap(order[i - 1], order[j]);
    }
    for (size_t begin = 0; begin < order.size(); begin += size_t(config.batch_size)) {
      size_t end = std::min(begin + size_t(config.batch_size), order.size());
      std::vector<corpus::PredictionPair> batch;
      batch.reserve(end - begin);
      for (size_t i = begin; i < end; ++i) batch.push_back(pairs[order[i]]);
      double loss = sk_loss(current, batch);
      if (!std::isfinite(loss))
        throw SkTuneError("sk_train: non-finite loss at batch " + std::to_string(step));
      std::vector<double> grad = sk_loss_grad(current, batch);
      auto& table = current.table();
      for (size_t i = 0; i < table.size(); ++i) table[i] -= config.lr * grad[i];
      if (trace.is_open()) trace << step << ',' << loss << '\n';
      ++step;
    }
  }
  return current;
}

}  // namespace safact::sktune
