#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "oracles.hpp"
#include "vfm/metrics.hpp"
#include "vfm/random.hpp"

using namespace vfm;

namespace {

PredictionSet make(std::vector<double> truth, std::vector<double> score) {
  PredictionSet p;
  p.truth = std::move(truth);
  p.score = std::move(score);
  return p;
}

PredictionSet random_binary(Rng& rng, std::size_t n, int distinct_scores) {
  std::bernoulli_distribution coin(0.4);
  std::uniform_int_distribution<int> level(0, distinct_scores - 1);
  PredictionSet p;
  for (std::size_t i = 0; i < n; ++i) p.add(coin(rng) ? 1.0 : 0.0, level(rng) / 10.0);
  if (std::count(p.truth.begin(), p.truth.end(), 1.0) == 0) p.truth[0] = 1.0;
  if (std::count(p.truth.begin(), p.truth.end(), 0.0) == 0) p.truth[1] = 0.0;
  return p;
}

}  // namespace

TEST_CASE("rmse") {
  CHECK(rmse(make({1, 2, 5}, {1, 2, 5})) == 0.0);
  CHECK(rmse(make({1, 5}, {2, 4})) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(rmse(make({3}, {3.5})) == doctest::Approx(0.5).epsilon(1e-15));
  // Clamping to [1, 5] is on by default and can be turned off.
  CHECK(rmse(make({5}, {7})) == 0.0);
  CHECK(rmse(make({5}, {7}), RmseOptions{false}) == doctest::Approx(2.0));
  CHECK_THROWS_AS(rmse(PredictionSet{}), MetricError);

  Rng rng(3);
  std::uniform_real_distribution<double> u(0.0, 6.0);
  for (int i = 0; i < 100; ++i) {
    auto p = make({u(rng), u(rng)}, {u(rng), u(rng)});
    CHECK(rmse(p) >= 0.0);
  }
}

TEST_CASE("accuracy") {
  CHECK(accuracy(make({1, 0, 1}, {0.9, 0.1, 0.7})) == 1.0);
  CHECK(accuracy(make({1, 1}, {0.6, 0.4})) == 0.5);
  CHECK(accuracy(make({1}, {0.5})) == 1.0);
  CHECK(accuracy(make({0}, {0.5})) == 0.0);
}

TEST_CASE("auc") {
  CHECK(auc(make({0, 0, 1, 1}, {0.1, 0.2, 0.8, 0.9})) == 1.0);
  CHECK(auc(make({0, 1, 0, 1}, {0.3, 0.3, 0.3, 0.3})) == 0.5);
  auto four = make({1, 0, 1, 0}, {0.8, 0.6, 0.4, 0.2});
  CHECK(auc(four) == doctest::Approx(oracle::auc_pairs(four.truth, four.score)));
  CHECK(auc(four) == doctest::Approx(0.75));
  CHECK_THROWS_AS(auc(make({1, 1}, {0.2, 0.3})), MetricError);
}

TEST_CASE("auc equals brute-force pair counting, with ties") {
  Rng rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    auto p = random_binary(rng, 2 + rng() % 40, 6);
    CHECK(auc(p) == doctest::Approx(oracle::auc_pairs(p.truth, p.score)).epsilon(1e-12));
  }
}

TEST_CASE("mean average precision") {
  CHECK(mean_average_precision(make({1, 1, 0, 0}, {0.9, 0.8, 0.3, 0.1})) == 1.0);
  // Truths (1, 0, 1) in descending score order: 1/2 * 1 + 1/2 * 2/3.
  CHECK(mean_average_precision(make({1, 0, 1}, {0.9, 0.5, 0.1})) ==
        doctest::Approx(5.0 / 6.0).epsilon(1e-15));
  for (int n : {1, 2, 5, 17}) {
    std::vector<double> truth(n, 0.0), score(n);
    truth[n - 1] = 1.0;
    for (int i = 0; i < n; ++i) score[i] = n - i;
    CHECK(mean_average_precision(make(truth, score)) == doctest::Approx(1.0 / n));
  }
  CHECK_THROWS_AS(mean_average_precision(make({0, 0}, {0.1, 0.2})), MetricError);
}

TEST_CASE("mean average precision equals the threshold sweep oracle") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    auto p = random_binary(rng, 2 + rng() % 40, 8);
    CHECK(mean_average_precision(p) ==
          doctest::Approx(oracle::map_sweep(p.truth, p.score)).epsilon(1e-12));
  }
}

TEST_CASE("auc and map depend only on the score ordering") {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    auto p = random_binary(rng, 30, 7);
    auto q = p;
    for (auto& s : q.score) s = std::exp(3.0 * s) - 4.0;  // strictly increasing
    CHECK(auc(q) == doctest::Approx(auc(p)).epsilon(1e-14));
    CHECK(mean_average_precision(q) == doctest::Approx(mean_average_precision(p)).epsilon(1e-14));

    std::vector<std::size_t> perm(p.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    PredictionSet r;
    for (auto i : perm) r.add(p.truth[i], p.score[i]);
    CHECK(auc(r) == doctest::Approx(auc(p)).epsilon(1e-14));
    CHECK(mean_average_precision(r) == doctest::Approx(mean_average_precision(p)).epsilon(1e-14));
  }
}

TEST_CASE("mean predictive variance") {
  PredictionSet p;
  p.add(1, 0.5, 0.0);
  p.add(0, 0.5, 0.0);
  CHECK(mean_predictive_variance(p) == 0.0);
  PredictionSet q;
  q.add(1, 0.5, 1.0);
  q.add(0, 0.5, 3.0);
  CHECK(mean_predictive_variance(q) == 2.0);
  CHECK_THROWS_AS(mean_predictive_variance(make({1}, {0.5})), MetricError);

  // Per-item variances computed two-pass from raw draws, then averaged.
  Rng rng(13);
  std::normal_distribution<double> n;
  PredictionSet r;
  double expected = 0.0;
  for (int item = 0; item < 10; ++item) {
    oracle::RunningStats s;
    for (int i = 0; i < 50; ++i) s.add((item + 1) * n(rng));
    r.add(0, s.mean(), s.variance());
    expected += s.variance() / 10.0;
  }
  CHECK(mean_predictive_variance(r) == doctest::Approx(expected).epsilon(1e-12));
}
