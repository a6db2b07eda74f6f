#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "vfm/fm_core.hpp"
#include "vfm/sparse_data.hpp"

namespace vfm {

/// KL(N(q_mean, q_scale^2) || N(p_mean, 1/p_precision)).
/// Throws std::invalid_argument unless q_scale > 0 and p_precision > 0.
double kl_gaussian(double q_mean, double q_scale, double p_mean, double p_precision);

/// How the mini-batch KL estimate is rescaled.
enum class KlWeighting {
  PerGroup,  // K_g / sum_{k in F(B), g(k)=g} alpha_k, group by group
  Global,    // K / sum_{k in F(B)} alpha_k for every feature
};

/// Occurrence statistics of one batch relative to the full training set.
struct BatchStats {
  std::size_t num_train = 0;   // N
  std::size_t batch_size = 0;  // |B|
  /// F(B) in ascending order, with N_k^B and alpha_k = N_k^B / N_k aligned.
  std::vector<std::uint32_t> active;
  std::vector<std::size_t> batch_counts;
  std::vector<double> weight;
  /// Indexed by group id - 1.
  std::vector<double> group_weight_sum;
  /// K_g: features of the group that occur in the training set.
  std::vector<std::size_t> group_size;
};

/// `batch` holds row indices into `train`.
BatchStats compute_batch_stats(const Dataset& train, std::span<const std::size_t> batch);

/// S reparameterization draws. The global bias noise is shared by all
/// samples of a batch; per-feature noise is filled only for F(B).
struct NoiseDraws {
  double w0 = 0.0;
  std::vector<Noise> samples;

  static NoiseDraws zeros(std::size_t samples, std::size_t num_features, std::size_t d);
};

NoiseDraws draw_noise(const BatchStats& stats, std::size_t samples, std::size_t num_features,
                      std::size_t d, Rng& rng);

struct ElboTerms {
  double value = 0.0;            // expected_loglik - kl_features - kl_bias
  double expected_loglik = 0.0;  // N / (|B| S) * sum_s sum_i log p(y_i | x_i, theta_s)
  double kl_features = 0.0;      // rescaled sum over F(B)
  double kl_bias = 0.0;          // KL(q(w0) || p(w0))
  bool no_active_features = false;
};

/// Gradient in the VariationalParams layout. Feature blocks outside
/// `touched_features` are exactly zero.
struct Gradient {
  std::vector<double> values;
  std::vector<std::uint32_t> touched_features;
};

struct ElboOptions {
  KlWeighting kl_weighting = KlWeighting::PerGroup;
};

/// Mini-batch ELBO for given noise; fills `grad` when non-null with the
/// exact gradient with respect to every unconstrained parameter.
ElboTerms evaluate_elbo(const VariationalParams& vp, const Dataset& train,
                        std::span<const std::size_t> batch, const BatchStats& stats,
                        const NoiseDraws& noise, const ElboOptions& options,
                        Gradient* grad = nullptr);

ElboTerms elbo_batch(const VariationalParams& vp, const Dataset& train,
                     std::span<const std::size_t> batch, const BatchStats& stats,
                     std::size_t samples, Rng& rng, const ElboOptions& options = {});

Gradient elbo_gradients(const VariationalParams& vp, const Dataset& train,
                        std::span<const std::size_t> batch, const BatchStats& stats,
                        std::size_t samples, Rng& rng, const ElboOptions& options = {});

/// log p(y | y_hat) for the task's likelihood; `noise_precision` is ignored
/// for classification.
double log_likelihood(Task task, double y, double y_hat, double noise_precision);

}  // namespace vfm
