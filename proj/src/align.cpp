#include "safact/align.hpp"

#include "safact/selfeval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

namespace safact::align {

std::vector<corpus::PreferencePair> build_preferences(const std::string& prompt_id,
                                                      std::vector<ScoredSample> samples,
                                                      double alpha,
                                                      std::vector<std::string>* warnings) {
  if (samples.size() < 2)
    throw AlignError("build_preferences: prompt " + prompt_id + " needs >= 2 scored samples");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw AlignError("build_preferences: alpha must lie in (0,1)");

  std::sort(samples.begin(), samples.end(), [](const ScoredSample& a, const ScoredSample& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.sample_id < b.sample_id;  // stable tie order
  });

  size_t m = samples.size();
  size_t w_size = size_t(std::ceil(alpha * double(m)));
  w_size = std::min(w_size, m);  // alpha < 1 keeps L non-empty for m >= 2, but clamp anyway

  std::vector<corpus::PreferencePair> pairs;
  for (size_t wi = 0; wi < w_size; ++wi) {
    for (size_t li = w_size; li < m; ++li) {
      if (samples[wi].score == samples[li].score) continue;  // equal-score pairs carry no signal
      corpus::PreferencePair p;
      p.prompt_id = prompt_id;
      p.chosen_text = samples[wi].text;
      p.rejected_text = samples[li].text;
      p.chosen_score = samples[wi].score;
      p.rejected_score = samples[li].score;
      p.source = corpus::PairSource::ptrue;
      pairs.push_back(std::move(p));
    }
  }
  if (pairs.empty() && warnings)
    warnings->push_back("prompt " + prompt_id + ": all cross pairs tied, no preferences");
  return pairs;
}

std::vector<int> cluster_by_equivalence(const std::vector<std::string>& texts,
                                        sktune::EntailmentOracle& oracle) {
  std::vector<int> parent(texts.size());
  std::iota(parent.begin(), parent.end(), 0);
  std::function<int(int)> find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (size_t i = 0; i < texts.size(); ++i)
    for (size_t j = i + 1; j < texts.size(); ++j)
      if (sktune::check_equivalence(oracle, texts[i], texts[j]).equivalent) {
        int ri = find(int(i)), rj = find(int(j));
        if (ri != rj) parent[std::max(ri, rj)] = std::min(ri, rj);
      }
  std::vector<int> root(texts.size());
  for (size_t i = 0; i < texts.size(); ++i) root[i] = find(int(i));
  return root;
}

namespace {

std::vector<corpus::PreferencePair> cluster_pairs(const std::string& prompt_id,
                                                  const std::vector<ScoredSample>& responses,
                                                  const std::vector<int>& cluster,
                                                  int preferred_cluster,
                                                  corpus::PairSource source,
                                                  std::vector<std::string>* warnings) {
  size_t preferred_size = 0;
  std::vector<size_t> cluster_size(responses.size(), 0);
  for (int c : cluster) cluster_size[size_t(c)]++;
  preferred_size = cluster_size[size_t(preferred_cluster)];

  std::vector<corpus::PreferencePair> pairs;
  for (size_t wi = 0; wi < responses.size(); ++wi) {
    if (cluster[wi] != preferred_cluster) continue;
    for (size_t li = 0; li < responses.size(); ++li) {
      if (cluster[li] == preferred_cluster) continue;
      corpus::PreferencePair p;
      p.prompt_id = prompt_id;
      p.chosen_text = responses[wi].text;
      p.rejected_text = responses[li].text;
      p.chosen_score = double(preferred_size);
      p.rejected_score = double(cluster_size[size_t(cluster[li])]);
      p.source = source;
      pairs.push_back(std::move(p));
    }
  }
  if (pairs.empty() && warnings)
    warnings->push_back("prompt " + prompt_id +
                        ": every response in one equivalence cluster, no preferences");
  return pairs;
}

}  // namespace

std::vector<corpus::PreferencePair> build_preferences_se(const std::string& prompt_id,
                                                         const std::vector<ScoredSample>& responses,
                                                         sktune::EntailmentOracle& oracle,
                                                         std::vector<std::string>* warnings) {
  if (responses.size() < 2)
    throw AlignError("build_preferences_se: need >= 2 responses for " + prompt_id);
  std::vector<std::string> texts;
  for (const auto& r : responses) texts.push_back(r.text);
  std::vector<int> cluster = cluster_by_equivalence(texts, oracle);

  // largest cluster wins; ties break to the cluster holding the lowest
  // minimum sample_id
  std::vector<size_t> size_of(responses.size(), 0);
  std::vector<int> min_sample(responses.size(), INT32_MAX);
  for (size_t i = 0; i < responses.size(); ++i) {
    size_of[size_t(cluster[i])]++;
    min_sample[size_t(cluster[i])] =
        std::min(min_sample[size_t(cluster[i])], responses[i].sample_id);
  }
  int best = -1;
  for (size_t c = 0; c < responses.size(); ++c) {
    if (size_of[c] == 0) continue;
    if (best < 0 || size_of[c] > size_of[size_t(best)] ||
        (size_of[c] == size_of[size_t(best)] && min_sample[c] < min_sample[size_t(best)]))
      best = int(c);
  }
  return cluster_pairs(prompt_id, responses, cluster, best, corpus::PairSource::se, warnings);
}

std::vector<corpus::PreferencePair> build_preferences_usc(const std::string& prompt_id,
                                                          const std::vector<ScoredSample>& responses,
                                                          backend::Backend& judge,
                                                          const std::string& judge_model,
                                                          const std::string& judge_template,
                                                          sktune::EntailmentOracle& oracle,
                                                          std::vector<std::string>* warnings) {
  if (responses.size() < 2)
    throw AlignError("build_preferences_usc: need >= 2 responses for " + prompt_id);
  std::vector<std::string> texts;
  for (const auto& r : responses) texts.push_back(r.text);
  size_t selected = backend::usc_select(judge, judge_model, texts, judge_template);
  std::vector<int> cluster = cluster_by_equivalence(texts, oracle);
  return cluster_pairs(prompt_id, responses, cluster, cluster[selected],
                       corpus::PairSource::usc, warnings);
}

std::vector<corpus::PreferencePair> build_mcqa_preferences(const corpus::PromptRecord& prompt,
                                                           const std::vector<double>& option_scores,
                                                           const corpus::FewshotBlock& fewshot,
                                                           std::vector<std::string>* warnings) {
  if (prompt.task != corpus::Task::mcqa)
    throw AlignError("build_mcqa_preferences: prompt " + prompt.id + " is not mcqa");
  if (option_scores.size() != prompt.options.size())
    throw AlignError("build_mcqa_preferences: one score per option required for " + prompt.id);

  size_t top = 0;
  for (size_t i = 1; i < option_scores.size(); ++i)
    if (option_scores[i] > option_scores[top]) top = i;
  for (size_t i = 0; i < option_scores.size(); ++i) {
    if (i != top && option_scores[i] == option_scores[top]) {
      if (warnings)
        warnings->push_back("prompt " + prompt.id + ": top-score tie, no mcqa pairs");
      return {};
    }
  }

  std::string chosen = selfeval::assemble_true_false_prompt(fewshot, prompt.prompt,
                                                            prompt.options[top]) +
                       "A";
  std::vector<corpus::PreferencePair> pairs;
  for (size_t i = 0; i < prompt.options.size(); ++i) {
    if (i == top) continue;
    corpus::PreferencePair p;
    p.prompt_id = prompt.id;
    p.chosen_text = chosen;
    p.rejected_text =
        selfeval::assemble_true_false_prompt(fewshot, prompt.prompt, prompt.options[i]) + "B";
    p.chosen_score = option_scores[top];
    p.rejected_score = option_scores[i];
    p.source = corpus::PairSource::mcqa;
    pairs.push_back(std::move(p));
  }
  return pairs;
}

std::vector<DpoExample> to_dpo_examples(const std::vector<corpus::PreferencePair>& pairs,
                                        const std::function<std::string(const std::string&)>&
                                            prompt_text_for_id) {
  std::vector<DpoExample> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    DpoExample e;
    e.prompt = p.source == corpus::PairSource::mcqa ? std::string() : prompt_text_for_id(p.prompt_id);
    e.chosen = p.chosen_text;
    e.rejected = p.rejected_text;
    out.push_back(std::move(e));
  }
  return out;
}

namespace {

double pair_margin(const policy::PolicySnapshot& policy, const policy::PolicySnapshot& reference,
                   const DpoExample& e, double beta) {
  double chosen_ratio = policy::log_prob(policy, e.prompt, e.chosen) -
                        policy::log_prob(reference, e.prompt, e.chosen);
  double rejected_ratio = policy::log_prob(policy, e.prompt, e.rejected) -
                          policy::log_prob(reference, e.prompt, e.rejected);
  return beta * (chosen_ratio - rejected_ratio);
}

}  // namespace

double dpo_loss(const policy::PolicySnapshot& policy, const policy::PolicySnapshot& reference,
                const std::vector<DpoExample>& batch, double beta) {
  if (batch.empty()) throw AlignError("dpo_loss: batch must be non-empty");
  if (!(beta > 0.0)) throw AlignError("dpo_loss: beta must be > 0");
  long double total = 0.0L;
  for (const auto& e : batch)
    total -= sktune::log_sigmoid(pair_margin(policy, reference, e, beta));
  return double(total / batch.size());
}

double mean_implicit_reward_margin(const policy::PolicySnapshot& policy,
                                   const policy::PolicySnapshot& reference,
                                   const std::vector<DpoExample>& batch, double beta) {
  if (batch.empty()) throw AlignError("margin: batch must be non-empty");
  long double total = 0.0L;
  for (const auto& e : batch) total += pair_margin(policy, reference, e, beta);
  return double(total / batch.size());
}

std::vector<double> dpo_loss_grad(const policy::PolicySnapshot& policy,
                                  const policy::PolicySnapshot& reference,
                                  const std::vector<DpoExample>& batch, double beta) {
  if (batch.empty()) throw AlignError("dpo_loss_grad: batch must be non-empty");
  std::vector<double> grad(size_t{policy::kVocab} * policy::kVocab, 0.0);
  const double inv_n = 1.0 / double(batch.size());
  for (const auto& e : batch) {
    double margin = pair_margin(policy, reference, e, beta);
    // d(-log sigma(m))/d theta = -(1 - sigma(m)) * dm/d theta
    double coeff = -(1.0 - 1.0 / (1.0 + std::exp(-margin))) * beta * inv_n;
    std::vector<double> gw = policy::log_prob_grad(policy, e.prompt, e.chosen);
    std::vector<double> gl = policy::log_prob_grad(policy, e.prompt, e.rejected);
    for (size_t i = 0; i < grad.size(); ++i) grad[i] += coeff * (gw[i] - gl[i]);
  }
  return grad;
}

policy::PolicySnapshot dpo_train(const policy::PolicySnapshot& start,
                                 const policy::PolicySnapshot& reference,
                                 const std::vector<DpoExample>& pairs, const DpoConfig& config) {
  if (pairs.empty()) throw AlignError("dpo_train: no preference pairs");
  if (!(config.beta > 0.0)) throw AlignError("dpo_train: beta must be > 0");
  if (!(config.lr > 0.0)) throw AlignError("dpo_train: lr must be > 0");

  policy::PolicySnapshot current = start;
  std::mt19937_64 rng(config.seed);
  std::ofstream trace;
  if (!config.trace_path.empty()) {
    trace.open(config.trace_path, std::ios::trunc);
    trace << "step,loss,mean_margin\n";
  }

  std::vector<size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), size_t{0});
  size_t step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (size_t i = order.size(); i > 1; --i) {
      size_t j = size_t(policy::u01(rng()) * double(i));
      if (j >= i) j = i - 1;
      std::swap(order[i - 1], order[j]);
    }
    for (size_t begin = 0; begin < order.size(); begin += size_t(config.batch_size)) {
      size_t end = std::min(begin + size_t(config.batch_size), order.size());
      std::vector<DpoExample> batch;
      batch.reserve(end - begin);
      for (size_t i = begin; i < end; ++i) batch.push_back(pairs[order[i]]);
      double loss = dpo_loss(current, reference, batch, config.beta);
      if (!std::isfinite(loss))
        throw AlignError("dpo_train: non-finite loss at batch " + std::to_string(step));
      std::vector<double> grad = dpo_loss_grad(current, reference, batch, config.beta);
      auto& table = current.table();
      for (size_t i = 0; i < table.size(); ++i) table[i] -= config.lr * grad[i];
      if (trace.is_open())
        trace << step << ',' << loss << ','
              << mean_implicit_reward_margin(current, reference, batch, config.beta) << '\n';
      ++step;
    }
  }
  return current;
}

}  // namespace safact::align
