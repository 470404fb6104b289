#pragma once

#include <stdexcept>
#include <string>
#include <vector>

// Evaluation battery: MCQA selection accuracy, discrimination AUROC,
// calibration curves with ECE, and FActScore-style long-form aggregation.

namespace safact::metrics {

struct MetricsError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct QuestionScores {
  std::vector<double> option_scores;
  int correct_index = 0;
};

// Fraction of questions whose correct option holds strictly the highest
// score. A tie at the top counts as incorrect.
double selection_accuracy(const std::vector<QuestionScores>& questions);

// P(score(correct) > score(incorrect)) over all cross pairs, ties counted as
// one half (Mann-Whitney). Rank-based; the brute-force pairwise version lives
// in the test suite as the oracle.
double auroc(const std::vector<double>& correct_scores,
             const std::vector<double>& incorrect_scores);

struct CalibrationBin {
  double lower = 0.0;
  double upper = 0.0;
  double mean_confidence = 0.0;
  double empirical_accuracy = 0.0;
  size_t count = 0;
};

struct CalibrationReport {
  std::vector<CalibrationBin> bins;  // equal-width partition of [0,1]
  double ece = 0.0;
  int n_bins = 10;
};

struct Prediction {
  double confidence = 0.0;
  bool correct = false;
};

// Equal-width bins with right-inclusive upper edges; confidence 0 lands in
// the first bin, 1.0 in the last.
CalibrationReport calibration(const std::vector<Prediction>& predictions, int n_bins = 10);

struct ResponseVerdicts {
  bool abstained = false;
  std::vector<bool> supported;  // one verdict per atomic claim
};

struct FactScoreReport {
  double fact_score = 0.0;      // mean per-response precision, responding only
  double respond_ratio = 0.0;   // responding / total
  double mean_correct = 0.0;    // mean supported-claim count per responding response
  double mean_incorrect = 0.0;  // mean unsupported-claim count
};

FactScoreReport fact_score(const std::vector<ResponseVerdicts>& responses);

}  // namespace safact::metrics
