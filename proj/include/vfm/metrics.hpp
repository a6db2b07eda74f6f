#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace vfm {

class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Paired truths and scores, with optional per-pair predictive variance.
struct PredictionSet {
  std::vector<double> truth;
  std::vector<double> score;
  std::vector<double> variance;  // empty when not available

  std::size_t size() const noexcept { return truth.size(); }
  void add(double t, double s) {
    truth.push_back(t);
    score.push_back(s);
  }
  void add(double t, double s, double var) {
    add(t, s);
    variance.push_back(var);
  }
};

struct RmseOptions {
  bool clamp = true;  // clip predictions into [lo, hi] first
  double lo = 1.0;
  double hi = 5.0;
};

double rmse(const PredictionSet& preds, const RmseOptions& options = {});

/// Fraction of pairs with (score >= threshold) == truth.
double accuracy(const PredictionSet& preds, double threshold = 0.5);

/// Mann-Whitney AUC; tied scores count one half.
double auc(const PredictionSet& preds);

/// Sum over descending distinct score thresholds of (R_n - R_{n-1}) * P_n.
double mean_average_precision(const PredictionSet& preds);

double mean_predictive_variance(const PredictionSet& preds);

}  // namespace vfm
