#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vfm/elbo.hpp"
#include "vfm/fm_core.hpp"
#include "vfm/metrics.hpp"
#include "vfm/optim.hpp"
#include "vfm/sparse_data.hpp"

namespace vfm {

enum class Predictor { Last, Mean };

Predictor parse_predictor(std::string_view name);
std::string_view to_string(Predictor p);

struct TrainConfig {
  Task task = Task::Regression;
  std::size_t dim = 5;
  std::size_t samples = 1;
  std::size_t batch_size = 0;  // 0 = full batch
  double learning_rate = 0.1;
  std::size_t max_epochs = 1000;
  std::size_t patience_validation = 10;
  std::size_t patience_elbo = 4;
  std::uint64_t seed = 0;
  KlWeighting kl_weighting = KlWeighting::PerGroup;
  double init_precision = 0.02;
  /// Validation metric and stopping rule use this predictor.
  Predictor validation_predictor = Predictor::Mean;
  /// Iterates from this epoch on (1-based) enter the average.
  std::size_t average_from_epoch = 1;
  /// Reuse one noise draw for every batch (deterministic objective).
  bool freeze_noise = false;
  RmseOptions rmse;
};

/// N(0,1) means for w0, w and V, unit posterior scales, nu = 0,
/// lambda = init_precision, alpha = 1.
VariationalParams initialize(const FeatureSpace& space, const TrainConfig& config,
                             std::uint64_t seed);

struct EpochRecord {
  std::size_t epoch = 0;
  double elbo = 0.0;
  double train_metric = 0.0;
  double valid_metric = 0.0;  // NaN without a validation set
  double wall_time = 0.0;     // seconds since training started
};

enum class StopReason { MaxEpochs, ValidationPatience, ElboPatience };
std::string_view to_string(StopReason reason);

struct TrainResult {
  VariationalParams last;
  VariationalParams averaged;
  IterateAverage average;
  std::vector<EpochRecord> history;
  StopReason stop = StopReason::MaxEpochs;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, VariationalParams params, std::size_t epoch)
      : std::runtime_error(what), params_(std::move(params)), epoch_(epoch) {}
  const VariationalParams& params() const noexcept { return params_; }
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  VariationalParams params_;
  std::size_t epoch_;
};

/// Called after each epoch; returning false stops training.
using EpochCallback = std::function<bool(const EpochRecord&, const VariationalParams&)>;

/// With a validation set, stops when the validation metric worsens
/// `patience_validation` evaluations in a row; without one (refit), when the
/// epoch ELBO decreases `patience_elbo` epochs in a row.
TrainResult train(const Dataset& train_set, const Dataset* validation_set,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

/// RMSE (regression) or AUC (classification) of posterior-mean predictions.
double primary_metric(const VariationalParams& vp, const Dataset& data, const RmseOptions& rmse);
/// True when `a` is a better value than `b` for the task's primary metric.
bool metric_better(Task task, double a, double b);

std::vector<double> predict(const SampledParams& params, const Dataset& data);

void write_history_csv(std::ostream& out, const std::vector<EpochRecord>& history);

}  // namespace vfm
