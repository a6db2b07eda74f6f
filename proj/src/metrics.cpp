#include "vfm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace vfm {

namespace {

void check_nonempty(const PredictionSet& preds) {
  if (preds.truth.empty()) throw MetricError("empty prediction set");
  if (preds.truth.size() != preds.score.size()) {
    throw MetricError("truth and score lengths differ");
  }
}

std::vector<std::size_t> order_by_descending_score(const PredictionSet& preds) {
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return preds.score[a] > preds.score[b]; });
  return order;
}

}  // namespace

double rmse(const PredictionSet& preds, const RmseOptions& options) {
  check_nonempty(preds);
  double sum = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    double p = preds.score[i];
    if (options.clamp) p = std::clamp(p, options.lo, options.hi);
    const double err = preds.truth[i] - p;
    sum += err * err;
  }
  return std::sqrt(sum / static_cast<double>(preds.size()));
}

double accuracy(const PredictionSet& preds, double threshold) {
  check_nonempty(preds);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const bool predicted = preds.score[i] >= threshold;
    const bool actual = preds.truth[i] > 0.5;
    if (predicted == actual) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

double auc(const PredictionSet& preds) {
  check_nonempty(preds);
  // Average ranks over ascending scores; ties share their mean rank.
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return preds.score[a] < preds.score[b]; });
  double positive_rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && preds.score[order[j]] == preds.score[order[i]]) ++j;
    const double mean_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (preds.truth[order[k]] > 0.5) {
        positive_rank_sum += mean_rank;
        ++positives;
      }
    }
    i = j;
  }
  const std::size_t negatives = preds.size() - positives;
  if (positives == 0 || negatives == 0) throw MetricError("AUC needs both classes");
  const double p = static_cast<double>(positives);
  const double n = static_cast<double>(negatives);
  return (positive_rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

double mean_average_precision(const PredictionSet& preds) {
  check_nonempty(preds);
  const double total_positive = static_cast<double>(
      std::count_if(preds.truth.begin(), preds.truth.end(), [](double t) { return t > 0.5; }));
  if (total_positive == 0.0) throw MetricError("MAP needs at least one positive");
  const auto order = order_by_descending_score(preds);
  double tp = 0.0;
  double fp = 0.0;
  double previous_recall = 0.0;
  double result = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && preds.score[order[j]] == preds.score[order[i]]) {
      (preds.truth[order[j]] > 0.5 ? tp : fp) += 1.0;
      ++j;
    }
    const double recall = tp / total_positive;
    const double precision = tp / (tp + fp);
    result += (recall - previous_recall) * precision;
    previous_recall = recall;
    i = j;
  }
  return result;
}

double mean_predictive_variance(const PredictionSet& preds) {
  check_nonempty(preds);
  if (preds.variance.size() != preds.size()) {
    throw MetricError("prediction set carries no per-pair variances");
  }
  double sum = 0.0;
  for (double v : preds.variance) sum += v;
  return sum / static_cast<double>(preds.variance.size());
}

}  // namespace vfm
