#include "safact/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace safact::metrics {

double selection_accuracy(const std::vector<QuestionScores>& questions) {
  if (questions.empty()) throw MetricsError("selection_accuracy: no questions");
  size_t hits = 0;
  for (const auto& q : questions) {
    if (q.option_scores.size() < 2)
      throw MetricsError("selection_accuracy: need >= 2 options per question");
    if (q.correct_index < 0 || size_t(q.correct_index) >= q.option_scores.size())
      throw MetricsError("selection_accuracy: correct_index out of range");
    double best = q.option_scores[q.correct_index];
    bool strict = true;
    for (size_t i = 0; i < q.option_scores.size(); ++i) {
      if (int(i) == q.correct_index) continue;
      if (!(best > q.option_scores[i])) {
        strict = false;
        break;
      }
    }
    if (strict) ++hits;
  }
  return double(hits) / double(questions.size());
}

double auroc(const std::vector<double>& correct_scores,
             const std::vector<double>& incorrect_scores) {
  if (correct_scores.empty() || incorrect_scores.empty())
    throw MetricsError("auroc: both score lists must be non-empty");
  const size_t n1 = correct_scores.size();
  const size_t n0 = incorrect_scores.size();

  struct Item {
    double score;
    bool positive;
  };
  std::vector<Item> all;
  all.reserve(n1 + n0);
  for (double s : correct_scores) all.push_back({s, true});
  for (double s : incorrect_scores) all.push_back({s, false});
  std::sort(all.begin(), all.end(),
            [](const Item& a, const Item& b) { return a.score < b.score; });

  // average ranks over tie groups, then Mann-Whitney U
  long double rank_sum_pos = 0.0L;
  size_t i = 0;
  while (i < all.size()) {
    size_t j = i;
    while (j < all.size() && all[j].score == all[i].score) ++j;
    long double avg_rank = (long double)(i + 1 + j) / 2.0L;  // ranks i+1 .. j
    for (size_t k = i; k < j; ++k)
      if (all[k].positive) rank_sum_pos += avg_rank;
    i = j;
  }
  long double u = rank_sum_pos - (long double)(n1) * (n1 + 1) / 2.0L;
  return double(u / ((long double)(n1) * (long double)(n0)));
}

CalibrationReport calibration(const std::vector<Prediction>& predictions, int n_bins) {
  if (n_bins < 1) throw MetricsError("calibration: n_bins must be >= 1");
  CalibrationReport rep;
  rep.n_bins = n_bins;
  rep.bins.resize(size_t(n_bins));
  std::vector<long double> conf_sum(size_t(n_bins), 0.0L);
  std::vector<size_t> hit(size_t(n_bins), 0);
  for (int b = 0; b < n_bins; ++b) {
    rep.bins[b].lower = double(b) / n_bins;
    rep.bins[b].upper = double(b + 1) / n_bins;
  }
  for (const auto& p : predictions) {
    if (!(p.confidence >= 0.0 && p.confidence <= 1.0))
      throw MetricsError("calibration: confidence outside [0,1]");
    // right-inclusive upper edges: bin b covers (b/n, (b+1)/n], 0 -> bin 0
    int b = int(std::ceil(p.confidence * n_bins)) - 1;
    b = std::clamp(b, 0, n_bins - 1);
    rep.bins[b].count++;
    conf_sum[b] += p.confidence;
    if (p.correct) hit[b]++;
  }
  long double ece = 0.0L;
  const size_t total = predictions.size();
  for (int b = 0; b < n_bins; ++b) {
    auto& bin = rep.bins[b];
    if (bin.count == 0) continue;
    bin.mean_confidence = double(conf_sum[b] / bin.count);
    bin.empirical_accuracy = double(hit[b]) / double(bin.count);
    if (total > 0)
      ece += (long double)(bin.count) / total *
             std::fabs(bin.mean_confidence - bin.empirical_accuracy);
  }
  rep.ece = double(ece);
  return rep;
}

FactScoreReport fact_score(const std::vector<ResponseVerdicts>& responses) {
  if (responses.empty()) throw MetricsError("fact_score: no responses");
  size_t responding = 0;
  long double precision_sum = 0.0L;
  long double correct_sum = 0.0L;
  long double incorrect_sum = 0.0L;
  for (const auto& r : responses) {
    if (r.abstained) continue;
    if (r.supported.empty())
      throw MetricsError("fact_score: responding response with zero claim verdicts");
    ++responding;
    size_t sup = size_t(std::count(r.supported.begin(), r.supported.end(), true));
    precision_sum += (long double)(sup) / r.supported.size();
    correct_sum += (long double)(sup);
    incorrect_sum += (long double)(r.supported.size() - sup);
  }
  FactScoreReport rep;
  rep.respond_ratio = double(responding) / double(responses.size());
  if (responding > 0) {
    rep.fact_score = double(precision_sum / responding);
    rep.mean_correct = double(correct_sum / responding);
    rep.mean_incorrect = double(incorrect_sum / responding);
  }
  return rep;
}

}  // namespace safact::metrics
