#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "vfm/fm_core.hpp"
#include "vfm/optim.hpp"
#include "vfm/sparse_data.hpp"
#include "vfm/trainer.hpp"

namespace vfm {

enum class Strategy { Random, MeanClosestHalf, MaxVariance };

/// "random", "mean" or "variance".
Strategy parse_strategy(std::string_view name);
std::string_view to_string(Strategy strategy);

struct ElicitationProtocol {
  double observed_user_fraction = 0.8;
  double interactive_fraction = 0.5;
  double validation_fraction = 0.5;
  std::size_t query_batch_size = 4;
  std::size_t rounds = 5;
  std::size_t samples = 100;  // S for predictive statistics and user updates

  /// Throws std::invalid_argument when the fractions or the query budget
  /// are inconsistent with `num_items`.
  void validate(std::size_t num_items) const;
};

/// Optimizer settings for the per-user posterior refit.
struct UserUpdateConfig {
  double learning_rate = 0.1;
  std::size_t max_iterations = 500;
  std::size_t patience_elbo = 4;
};

/// A trained model whose parameters stay fixed during elicitation.
struct FrozenModel {
  FeatureSpace space;
  VariationalParams params;
};

struct PredictiveStats {
  double mean_prob = 0.0;  // mean of sigmoid(y_s)
  double variance = 0.0;   // sample variance of the raw scores y_s
};

struct Answer {
  std::uint32_t item = 0;  // item feature index
  double label = 0.0;      // 0 or 1
};

/// One user's interactive loop against a frozen model. Items are feature
/// indices; the user owns a private copy of its feature block
/// [mu_w, rho_w, mu_v(d), rho_v(d)] initialised at its group prior.
class ElicitationSession {
 public:
  ElicitationSession(std::shared_ptr<const FrozenModel> model, std::uint32_t user_feature,
                     std::vector<std::uint32_t> interactive_pool, Strategy strategy,
                     std::size_t samples, UserUpdateConfig update, std::uint64_t seed);

  /// Monte-Carlo statistics over `samples` joint draws of w0, user and item.
  PredictiveStats predictive_stats(std::uint32_t item);

  /// Picks `count` unqueried pool items and marks them pending. Ties go to
  /// the smaller item index. Throws std::runtime_error when fewer remain.
  std::vector<std::uint32_t> select_queries(std::size_t count);

  /// Reveals pending items and refits the user block on every answer so
  /// far, warm-started. Throws std::invalid_argument for labels outside
  /// {0, 1} and std::logic_error for items that are not pending.
  void reveal_and_update(std::span<const Answer> answers);

  /// Restricted ELBO of the user block over the revealed answers for the
  /// given noise (laid out by make_update_noise), with optional gradient
  /// w.r.t. the user block.
  double restricted_elbo(std::span<const double> user_block, std::span<const double> noise,
                         std::vector<double>* grad) const;
  std::vector<double> make_update_noise(Rng& rng) const;

  /// One Adam refit on fixed noise; returns the number of iterations run.
  std::size_t optimize_user(std::span<const double> noise, const UserUpdateConfig& config);

  std::span<const double> user_block() const noexcept { return user_; }
  const std::vector<std::vector<double>>& trajectory() const noexcept { return trajectory_; }
  std::uint32_t user_feature() const noexcept { return user_feature_; }
  Strategy strategy() const noexcept { return strategy_; }
  const std::vector<std::uint32_t>& pool() const noexcept { return pool_; }
  const std::vector<std::uint32_t>& pending() const noexcept { return pending_; }
  const std::vector<Answer>& revealed() const noexcept { return revealed_; }
  const std::vector<std::uint32_t>& queried() const noexcept { return queried_; }
  bool is_queried(std::uint32_t item) const;
  const FrozenModel& model() const noexcept { return *model_; }
  std::size_t samples() const noexcept { return samples_; }

 private:
  std::shared_ptr<const FrozenModel> model_;
  std::uint32_t user_feature_;
  std::uint32_t user_group_;
  std::vector<std::uint32_t> pool_;
  Strategy strategy_;
  std::size_t samples_;
  UserUpdateConfig update_;
  Rng rng_;
  std::vector<double> user_;
  std::vector<std::uint32_t> pending_;
  std::vector<std::uint32_t> queried_;
  std::vector<Answer> revealed_;
  std::vector<std::vector<double>> trajectory_;
};

// Preference-elicitation data -------------------------------------------------

/// Complete binary users x items matrix; r(u, i) = 1 iff the user rated the item.
struct PreferenceMatrix {
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  std::vector<std::uint8_t> values;  // row-major
  std::vector<std::int64_t> user_ids;
  std::vector<std::int64_t> item_ids;

  std::uint8_t at(std::size_t u, std::size_t i) const { return values[u * num_items + i]; }
  std::size_t row_sum(std::size_t u) const;
  /// Users at features [0, U), items at [U, U + I); one instance per cell of
  /// the selected rows (all rows when `rows` is empty).
  Dataset to_dataset(std::span<const std::size_t> rows = {}) const;
  std::uint32_t user_feature(std::size_t u) const { return static_cast<std::uint32_t>(u); }
  std::uint32_t item_feature(std::size_t i) const {
    return static_cast<std::uint32_t>(num_users + i);
  }
};

/// The 100 most-rated movies, then 100 random users who rated at least one
/// but not all of them. Throws DataError when fewer users qualify.
PreferenceMatrix build_movie10k(std::span<const MovieLensRating> ratings, std::uint64_t seed,
                                std::size_t num_items = 100, std::size_t num_users = 100);

struct SyntheticPreferenceOptions {
  std::size_t num_users = 100;
  std::size_t num_items = 100;
  std::size_t rank = 3;
  double activity_mean = -0.5;
  double activity_sd = 0.7;
  double popularity_sd = 0.5;
  double factor_scale = 2.5;
};

/// Planted low-rank logistic model, same shape and row-sum filter as
/// build_movie10k.
PreferenceMatrix synthetic_movie10k(std::uint64_t seed, const SyntheticPreferenceOptions& options = {});

// Simulated protocol ----------------------------------------------------------

struct RoundMetrics {
  std::size_t items_revealed = 0;
  double acc = 0.0;
  double auc = 0.0;
  double map = 0.0;
  double mean_variance = 0.0;
  std::size_t users = 0;
};

/// Everything shared by the strategies for one seed: the frozen model
/// trained on the observed users and the interactive/validation item split.
struct ElicitationSetup {
  std::shared_ptr<const FrozenModel> model;
  std::vector<std::size_t> observed_users;
  std::vector<std::size_t> held_out_users;
  std::vector<std::size_t> interactive_items;
  std::vector<std::size_t> validation_items;
};

ElicitationSetup prepare_elicitation(const PreferenceMatrix& matrix,
                                     const ElicitationProtocol& protocol,
                                     const TrainConfig& train_config, std::uint64_t seed);

/// Runs every held-out user independently and averages per-round
/// validation metrics over users. Users whose validation pool lacks a class
/// are left out of the metrics that need it.
std::vector<RoundMetrics> run_protocol(const PreferenceMatrix& matrix, const ElicitationSetup& setup,
                                       const ElicitationProtocol& protocol, Strategy strategy,
                                       const UserUpdateConfig& update, std::uint64_t seed);

}  // namespace vfm
