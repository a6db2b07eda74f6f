#include "vfm/trainer.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace vfm {

Predictor parse_predictor(std::string_view name) {
  if (name == "last") return Predictor::Last;
  if (name == "mean") return Predictor::Mean;
  throw std::invalid_argument("unknown predictor '" + std::string(name) + "'");
}

std::string_view to_string(Predictor p) { return p == Predictor::Last ? "last" : "mean"; }

std::string_view to_string(StopReason reason) {
  switch (reason) {
    case StopReason::MaxEpochs:
      return "max_epochs";
    case StopReason::ValidationPatience:
      return "validation_patience";
    case StopReason::ElboPatience:
      return "elbo_patience";
  }
  return "unknown";
}

VariationalParams initialize(const FeatureSpace& space, const TrainConfig& config,
                             std::uint64_t seed) {
  VariationalParams vp({space.num_features(), config.dim, space.num_groups()});
  Rng rng(seed);
  std::normal_distribution<double> normal;
  const double unit_scale = softplus_inverse(1.0);
  const double precision = softplus_inverse(config.init_precision);

  vp.global(VariationalParams::kMuW0) = normal(rng);
  vp.global(VariationalParams::kRhoW0) = unit_scale;
  vp.global(VariationalParams::kNuW0) = 0.0;
  vp.global(VariationalParams::kLambdaW0) = precision;
  vp.global(VariationalParams::kAlpha) = softplus_inverse(1.0);
  for (std::size_t k = 0; k < vp.num_features(); ++k) {
    vp.mu_w(k) = normal(rng);
    vp.rho_w(k) = unit_scale;
    for (auto& m : vp.mu_v(k)) m = normal(rng);
    for (auto& r : vp.rho_v(k)) r = unit_scale;
  }
  for (std::uint32_t g = 1; g <= vp.num_groups(); ++g) {
    vp.nu_w(g) = 0.0;
    vp.lambda_w_raw(g) = precision;
    for (auto& n : vp.nu_v(g)) n = 0.0;
    for (auto& l : vp.lambda_v_raw(g)) l = precision;
  }
  return vp;
}

std::vector<double> predict(const SampledParams& params, const Dataset& data) {
  std::vector<double> out;
  out.reserve(data.size());
  for (const auto& inst : data.instances()) {
    out.push_back(predict_mean_response(params, inst, data.task()));
  }
  return out;
}

double primary_metric(const VariationalParams& vp, const Dataset& data, const RmseOptions& rmse) {
  const auto scores = predict(posterior_mean_params(vp), data);
  PredictionSet preds;
  for (std::size_t i = 0; i < data.size(); ++i) preds.add(data[i].label, scores[i]);
  return data.task() == Task::Regression ? vfm::rmse(preds, rmse) : auc(preds);
}

bool metric_better(Task task, double a, double b) {
  return task == Task::Regression ? a < b : a > b;
}

namespace {

std::vector<std::vector<std::size_t>> make_batches(std::vector<std::size_t>& order,
                                                   std::size_t batch_size, Rng& rng) {
  std::vector<std::vector<std::size_t>> batches;
  if (batch_size == 0 || batch_size >= order.size()) {
    batches.push_back(order);
    return batches;
  }
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    const std::size_t end = std::min(order.size(), i + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

}  // namespace

TrainResult train(const Dataset& train_set, const Dataset* validation_set,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
  if (train_set.empty()) throw std::invalid_argument("empty training set");
  if (train_set.task() != config.task) {
    throw std::invalid_argument("training set task does not match the configuration");
  }
  if (validation_set && validation_set->empty()) validation_set = nullptr;
  if (validation_set && !(validation_set->space() == train_set.space())) {
    throw std::invalid_argument("training and validation sets use different feature spaces");
  }
  if (config.samples == 0) throw std::invalid_argument("need at least one variational sample");

  const auto start = std::chrono::steady_clock::now();
  Rng batch_rng(derive_seed(config.seed, "batches"));
  Rng noise_rng(derive_seed(config.seed, "noise"));

  TrainResult result;
  result.last = initialize(train_set.space(), config, derive_seed(config.seed, "init"));
  SparseAdam adam(result.last.size(), AdamOptions{config.learning_rate});
  const ElboOptions elbo_options{config.kl_weighting};
  const std::size_t K = result.last.num_features();
  const std::size_t d = result.last.dim();

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  const bool full_batch = config.batch_size == 0 || config.batch_size >= train_set.size();
  std::optional<BatchStats> full_stats;
  if (full_batch) full_stats = compute_batch_stats(train_set, order);
  std::optional<NoiseDraws> frozen;

  double previous_metric = std::numeric_limits<double>::quiet_NaN();
  double previous_elbo = std::numeric_limits<double>::quiet_NaN();
  std::size_t worse_streak = 0;
  std::size_t elbo_streak = 0;
  Gradient grad;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    double elbo_sum = 0.0;
    std::size_t num_batches = 0;
    for (const auto& batch : make_batches(order, config.batch_size, batch_rng)) {
      const BatchStats stats = full_batch ? *full_stats : compute_batch_stats(train_set, batch);
      NoiseDraws fresh;
      if (config.freeze_noise && !frozen) {
        frozen = draw_noise(compute_batch_stats(train_set, order), config.samples, K, d,
                            noise_rng);
      }
      if (!config.freeze_noise) fresh = draw_noise(stats, config.samples, K, d, noise_rng);
      const NoiseDraws& noise = config.freeze_noise ? *frozen : fresh;

      const auto terms =
          evaluate_elbo(result.last, train_set, batch, stats, noise, elbo_options, &grad);
      if (!std::isfinite(terms.value)) {
        std::ostringstream msg;
        msg << "non-finite ELBO at epoch " << epoch << " (loglik " << terms.expected_loglik
            << ", kl " << terms.kl_features << ", kl_w0 " << terms.kl_bias << ", alpha "
            << result.last.noise_precision() << ")";
        throw TrainingDiverged(msg.str(), result.last, epoch);
      }
      elbo_sum += terms.value;
      ++num_batches;
      const auto ranges = trainable_ranges(result.last, grad.touched_features);
      adam.step(result.last.values(), grad.values, ranges);
      if (epoch >= config.average_from_epoch) result.average.record(result.last);
    }

    EpochRecord record;
    record.epoch = epoch;
    record.elbo = elbo_sum / static_cast<double>(num_batches);
    const VariationalParams& scored =
        config.validation_predictor == Predictor::Mean && result.average.count() > 0
            ? (result.averaged = result.average.averaged(result.last))
            : result.last;
    record.train_metric = primary_metric(scored, train_set, config.rmse);
    record.valid_metric = validation_set ? primary_metric(scored, *validation_set, config.rmse)
                                         : std::numeric_limits<double>::quiet_NaN();
    record.wall_time =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.history.push_back(record);

    bool stop = false;
    if (validation_set) {
      if (epoch > 1 && metric_better(config.task, previous_metric, record.valid_metric)) {
        ++worse_streak;
      } else {
        worse_streak = 0;
      }
      previous_metric = record.valid_metric;
      if (config.patience_validation > 0 && worse_streak >= config.patience_validation) {
        result.stop = StopReason::ValidationPatience;
        stop = true;
      }
    } else {
      if (epoch > 1 && record.elbo < previous_elbo) {
        ++elbo_streak;
      } else {
        elbo_streak = 0;
      }
      previous_elbo = record.elbo;
      if (config.patience_elbo > 0 && elbo_streak >= config.patience_elbo) {
        result.stop = StopReason::ElboPatience;
        stop = true;
      }
    }
    if (on_epoch && !on_epoch(record, result.last)) stop = true;
    if (stop) break;
  }
  result.averaged = result.average.averaged(result.last);
  return result;
}

void write_history_csv(std::ostream& out, const std::vector<EpochRecord>& history) {
  out << "epoch,elbo,train_metric,valid_metric,wall_time\n";
  const auto old_precision = out.precision(10);
  for (const auto& r : history) {
    out << r.epoch << ',' << r.elbo << ',' << r.train_metric << ',' << r.valid_metric << ','
        << r.wall_time << '\n';
  }
  out.precision(old_precision);
}

}  // namespace vfm
