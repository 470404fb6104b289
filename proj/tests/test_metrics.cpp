#include <doctest.h>

#include "safact/metrics.hpp"

#include <cmath>
#include <random>

using namespace safact;

namespace {

// quadratic pairwise oracle for AUROC, ties count one half
double auroc_brute(const std::vector<double>& pos, const std::vector<double>& neg) {
  double wins = 0.0;
  for (double p : pos)
    for (double n : neg) {
      if (p > n)
        wins += 1.0;
      else if (p == n)
        wins += 0.5;
    }
  return wins / (double(pos.size()) * double(neg.size()));
}

}  // namespace

TEST_CASE("selection accuracy counts strict winners only") {
  std::vector<metrics::QuestionScores> qs = {
      {{0.2, 0.9, 0.1}, 1},  // correct
      {{0.5, 0.5, 0.1}, 0},  // top tie, incorrect
      {{0.3, 0.2, 0.9}, 2},  // correct
  };
  CHECK(metrics::selection_accuracy(qs) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

  // invariant under strictly increasing transforms of each question's scores
  std::vector<metrics::QuestionScores> warped = qs;
  for (auto& q : warped)
    for (auto& s : q.option_scores) s = std::exp(3.0 * s) - 0.5;
  CHECK(metrics::selection_accuracy(warped) == metrics::selection_accuracy(qs));

  std::vector<metrics::QuestionScores> oracle = {{{1.0, 0.0, 0.0}, 0}, {{0.0, 1.0}, 1}};
  CHECK(metrics::selection_accuracy(oracle) == 1.0);
  std::vector<metrics::QuestionScores> anti = {{{0.0, 1.0, 1.0}, 0}, {{1.0, 0.0}, 1}};
  CHECK(metrics::selection_accuracy(anti) == 0.0);

  CHECK_THROWS_AS(metrics::selection_accuracy({}), metrics::MetricsError);
  CHECK_THROWS_AS(metrics::selection_accuracy({{{0.5}, 0}}), metrics::MetricsError);
  CHECK_THROWS_AS(metrics::selection_accuracy({{{0.5, 0.1}, 5}}), metrics::MetricsError);
}

TEST_CASE("auroc fixed points") {
  CHECK(metrics::auroc({0.9, 0.8}, {0.1, 0.2}) == doctest::Approx(1.0));
  CHECK(metrics::auroc({0.1}, {0.9}) == doctest::Approx(0.0));
  CHECK(metrics::auroc({0.5, 0.5}, {0.5}) == doctest::Approx(0.5));
  // 3 pos x 2 neg with one tie: wins 5.5 of 6
  CHECK(metrics::auroc({0.9, 0.6, 0.4}, {0.4, 0.1}) ==
        doctest::Approx(5.5 / 6.0).epsilon(1e-12));
  CHECK_THROWS_AS(metrics::auroc({}, {0.5}), metrics::MetricsError);
}

TEST_CASE("auroc agrees with the pairwise oracle on random instances") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    size_t n1 = 1 + rng() % 12, n0 = 1 + rng() % 12;
    std::vector<double> pos(n1), neg(n0);
    // coarse grid so ties are frequent
    for (auto& v : pos) v = double(rng() % 7) / 6.0;
    for (auto& v : neg) v = double(rng() % 7) / 6.0;
    double fast = metrics::auroc(pos, neg);
    double slow = auroc_brute(pos, neg);
    CHECK(std::fabs(fast - slow) < 1e-12);
  }
}

TEST_CASE("calibration bin edges are right-inclusive") {
  std::vector<metrics::Prediction> preds = {
      {0.0, true}, {0.1, false}, {0.10000000000000002, true}, {1.0, true}};
  auto rep = metrics::calibration(preds, 10);
  REQUIRE(rep.bins.size() == 10);
  CHECK(rep.bins[0].count == 2);  // 0.0 and 0.1 both land in (0, 0.1]
  CHECK(rep.bins[1].count == 1);  // the next representable value crosses the edge
  CHECK(rep.bins[9].count == 1);
  CHECK(rep.bins[9].upper == 1.0);
}

TEST_CASE("ece fixture: 0.4 weight at gap 0.1 plus 0.6 weight at gap 0.3") {
  std::vector<metrics::Prediction> preds;
  // bin (0.3, 0.4]: 4 predictions at 0.35, 1 correct -> |0.35 - 0.25| = 0.1
  for (int i = 0; i < 4; ++i) preds.push_back({0.35, i == 0});
  // bin (0.6, 0.7]: 6 predictions, mean confidence 0.6333.., 2 correct
  std::vector<double> confs = {0.61, 0.62, 0.63, 0.64, 0.65, 0.65};
  for (size_t i = 0; i < confs.size(); ++i) preds.push_back({confs[i], i < 2});
  auto rep = metrics::calibration(preds, 10);
  CHECK(rep.bins[3].count == 4);
  CHECK(rep.bins[6].count == 6);
  CHECK(rep.bins[6].mean_confidence ==
        doctest::Approx(3.8 / 6.0).epsilon(1e-12));
  CHECK(rep.ece == doctest::Approx(0.4 * 0.1 + 0.6 * (3.8 / 6.0 - 2.0 / 6.0)).epsilon(1e-12));
}

TEST_CASE("perfectly calibrated predictions give ece zero") {
  std::vector<metrics::Prediction> preds;
  for (int i = 0; i < 4; ++i) preds.push_back({0.75, i < 3});  // 3/4 at conf 0.75
  auto rep = metrics::calibration(preds, 4);
  CHECK(rep.ece == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(rep.bins[2].empirical_accuracy == doctest::Approx(0.75));
  CHECK_THROWS_AS(metrics::calibration({{1.5, true}}, 10), metrics::MetricsError);
  CHECK_THROWS_AS(metrics::calibration(preds, 0), metrics::MetricsError);
}

TEST_CASE("ece extremes") {
  std::vector<metrics::Prediction> half;
  for (int i = 0; i < 10; ++i) half.push_back({0.5, i % 2 == 0});
  CHECK(metrics::calibration(half, 10).ece == doctest::Approx(0.0).epsilon(1e-12));

  std::vector<metrics::Prediction> wrong;
  for (int i = 0; i < 5; ++i) wrong.push_back({1.0, false});
  CHECK(metrics::calibration(wrong, 10).ece == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("fact score aggregation") {
  // (3 supported, 1 unsupported) plus (1, 1)
  std::vector<metrics::ResponseVerdicts> rs = {
      {false, {true, true, true, false}},
      {false, {true, false}},
  };
  auto rep = metrics::fact_score(rs);
  CHECK(rep.fact_score == doctest::Approx(0.625).epsilon(1e-12));
  CHECK(rep.mean_correct == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(rep.mean_incorrect == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rep.respond_ratio == 1.0);

  // invariant to response and claim order
  std::vector<metrics::ResponseVerdicts> shuffled = {
      {false, {false, true}},
      {false, {false, true, true, true}},
  };
  auto rep2 = metrics::fact_score(shuffled);
  CHECK(rep2.fact_score == rep.fact_score);
  CHECK(rep2.mean_correct == rep.mean_correct);

  auto with_abstain = metrics::fact_score(
      {{false, {true}}, {false, {true, true}}, {true, {}}, {false, {true}}});
  CHECK(with_abstain.respond_ratio == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(with_abstain.fact_score == doctest::Approx(1.0).epsilon(1e-12));

  CHECK_THROWS_AS(metrics::fact_score({{false, {}}}), metrics::MetricsError);
  CHECK_THROWS_AS(metrics::fact_score({}), metrics::MetricsError);
  auto all_abstain = metrics::fact_score({{true, {}}, {true, {}}});
  CHECK(all_abstain.respond_ratio == 0.0);
  CHECK(all_abstain.fact_score == 0.0);
}
