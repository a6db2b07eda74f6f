#include "vfm/elbo.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace vfm {

double kl_gaussian(double q_mean, double q_scale, double p_mean, double p_precision) {
  if (!(q_scale > 0.0)) throw std::invalid_argument("KL needs a positive posterior scale");
  if (!(p_precision > 0.0)) throw std::invalid_argument("KL needs a positive prior precision");
  const double var = q_scale * q_scale;
  const double diff = q_mean - p_mean;
  return 0.5 * (p_precision * var + p_precision * diff * diff - 1.0 - std::log(p_precision * var));
}

double log_likelihood(Task task, double y, double y_hat, double noise_precision) {
  if (task == Task::Classification) {
    // y log s(t) + (1 - y) log s(-t)
    return y * log_sigmoid(y_hat) + (1.0 - y) * log_sigmoid(-y_hat);
  }
  const double err = y - y_hat;
  return 0.5 * std::log(noise_precision / (2.0 * std::numbers::pi)) -
         0.5 * noise_precision * err * err;
}

BatchStats compute_batch_stats(const Dataset& train, std::span<const std::size_t> batch) {
  const auto& space = train.space();
  const auto& counts = train.feature_counts();
  BatchStats stats;
  stats.num_train = train.size();
  stats.batch_size = batch.size();

  std::vector<std::size_t> in_batch(space.num_features(), 0);
  for (auto row : batch) {
    for (const auto& e : train[row].entries) ++in_batch[e.index];
  }
  stats.group_weight_sum.assign(space.num_groups(), 0.0);
  stats.group_size.assign(space.num_groups(), 0);
  for (std::size_t k = 0; k < in_batch.size(); ++k) {
    const auto g = space.group_of(k) - 1;
    if (counts[k] > 0) ++stats.group_size[g];
    if (in_batch[k] == 0) continue;
    const double alpha = static_cast<double>(in_batch[k]) / static_cast<double>(counts[k]);
    stats.active.push_back(static_cast<std::uint32_t>(k));
    stats.batch_counts.push_back(in_batch[k]);
    stats.weight.push_back(alpha);
    stats.group_weight_sum[g] += alpha;
  }
  return stats;
}

NoiseDraws NoiseDraws::zeros(std::size_t samples, std::size_t num_features, std::size_t d) {
  NoiseDraws draws;
  draws.samples.assign(samples, Noise::zeros(num_features, d));
  return draws;
}

NoiseDraws draw_noise(const BatchStats& stats, std::size_t samples, std::size_t num_features,
                      std::size_t d, Rng& rng) {
  std::normal_distribution<double> normal;
  NoiseDraws draws = NoiseDraws::zeros(samples, num_features, d);
  draws.w0 = normal(rng);
  for (auto& sample : draws.samples) {
    for (auto k : stats.active) {
      double* block = sample.features.data() + static_cast<std::size_t>(k) * (d + 1);
      for (std::size_t j = 0; j <= d; ++j) block[j] = normal(rng);
    }
  }
  return draws;
}

namespace {

// KL for one scalar with gradient contributions scaled by -coef.
struct ScalarKl {
  double value;
  double d_mu;
  double d_rho;
  double d_nu;
  double d_lambda_raw;
};

ScalarKl scalar_kl(double mu, double rho, double nu, double lambda_raw) {
  const double sigma = softplus(rho);
  const double lambda = softplus(lambda_raw);
  const double diff = mu - nu;
  ScalarKl r;
  r.value = kl_gaussian(mu, sigma, nu, lambda);
  r.d_mu = lambda * diff;
  r.d_rho = (lambda * sigma - 1.0 / sigma) * sigmoid(rho);
  r.d_nu = -lambda * diff;
  r.d_lambda_raw = 0.5 * (sigma * sigma + diff * diff - 1.0 / lambda) * sigmoid(lambda_raw);
  return r;
}

}  // namespace

ElboTerms evaluate_elbo(const VariationalParams& vp, const Dataset& train,
                        std::span<const std::size_t> batch, const BatchStats& stats,
                        const NoiseDraws& noise, const ElboOptions& options, Gradient* grad) {
  const std::size_t K = vp.num_features();
  const std::size_t d = vp.dim();
  const std::size_t S = noise.samples.size();
  const Task task = train.task();
  if (batch.empty()) throw std::invalid_argument("ELBO needs a non-empty batch");
  if (S == 0) throw std::invalid_argument("ELBO needs at least one variational sample");
  if (train.space().num_features() != K || train.space().num_groups() != vp.num_groups()) {
    throw std::invalid_argument("parameters do not match the dataset's feature space");
  }
  if (stats.batch_size != batch.size() || stats.num_train != train.size()) {
    throw std::invalid_argument("batch statistics do not describe this batch");
  }

  ElboTerms terms;
  if (grad) {
    grad->values.assign(vp.size(), 0.0);
    grad->touched_features = stats.active;
  }
  const std::size_t stride = d + 1;
  const double alpha = vp.noise_precision();
  const double mu_w0 = vp.global(VariationalParams::kMuW0);
  const double rho_w0 = vp.global(VariationalParams::kRhoW0);
  const double w0 = mu_w0 + noise.w0 * softplus(rho_w0);
  const double scale = static_cast<double>(stats.num_train) /
                       (static_cast<double>(batch.size()) * static_cast<double>(S));

  // theta and dL/dtheta buffers, [w, v(d)] per feature; only F(B) rows used.
  std::vector<double> theta(K * stride, 0.0);
  std::vector<double> dtheta(grad ? K * stride : 0, 0.0);
  std::vector<double> sums(d);
  double loglik = 0.0;
  double d_w0 = 0.0;
  double d_alpha = 0.0;

  for (std::size_t s = 0; s < S; ++s) {
    const Noise& eps = noise.samples[s];
    for (auto k : stats.active) {
      double* th = theta.data() + k * stride;
      th[0] = vp.mu_w(k) + eps.w(k) * softplus(vp.rho_w(k));
      auto mu = vp.mu_v(k);
      auto rho = vp.rho_v(k);
      for (std::size_t f = 0; f < d; ++f) th[1 + f] = mu[f] + eps.v(k, f) * softplus(rho[f]);
    }
    double sample_loglik = 0.0;
    for (auto row : batch) {
      const auto& inst = train[row];
      double y_hat = w0;
      std::fill(sums.begin(), sums.end(), 0.0);
      double sum_sq = 0.0;
      for (const auto& e : inst.entries) {
        const double* th = theta.data() + e.index * stride;
        y_hat += th[0] * e.value;
        for (std::size_t f = 0; f < d; ++f) {
          const double t = th[1 + f] * e.value;
          sums[f] += t;
          sum_sq += t * t;
        }
      }
      double sq = 0.0;
      for (double v : sums) sq += v * v;
      y_hat += 0.5 * (sq - sum_sq);

      sample_loglik += log_likelihood(task, inst.label, y_hat, alpha);
      if (!grad) continue;

      double g;
      if (task == Task::Classification) {
        g = inst.label - sigmoid(y_hat);
      } else {
        const double err = inst.label - y_hat;
        g = alpha * err;
        d_alpha += 0.5 / alpha - 0.5 * err * err;
      }
      g *= scale;
      d_w0 += g;
      for (const auto& e : inst.entries) {
        const double* th = theta.data() + e.index * stride;
        double* dt = dtheta.data() + e.index * stride;
        dt[0] += g * e.value;
        for (std::size_t f = 0; f < d; ++f) {
          dt[1 + f] += g * e.value * (sums[f] - th[1 + f] * e.value);
        }
      }
    }
    loglik += sample_loglik;

    if (!grad) continue;
    // Chain rule through theta = mu + eps * softplus(rho).
    for (auto k : stats.active) {
      double* dt = dtheta.data() + k * stride;
      const std::size_t off = vp.feature_offset(k);
      const double rho_w = vp.rho_w(k);
      grad->values[off] += dt[0];
      grad->values[off + 1] += dt[0] * eps.w(k) * sigmoid(rho_w);
      auto rho = vp.rho_v(k);
      for (std::size_t f = 0; f < d; ++f) {
        grad->values[off + 2 + f] += dt[1 + f];
        grad->values[off + 2 + d + f] += dt[1 + f] * eps.v(k, f) * sigmoid(rho[f]);
      }
      std::fill(dt, dt + stride, 0.0);
    }
  }
  terms.expected_loglik = scale * loglik;
  if (grad) {
    grad->values[VariationalParams::kMuW0] += d_w0;
    grad->values[VariationalParams::kRhoW0] += d_w0 * noise.w0 * sigmoid(rho_w0);
    if (task == Task::Regression) {
      grad->values[VariationalParams::kAlpha] +=
          scale * d_alpha * sigmoid(vp.global(VariationalParams::kAlpha));
    }
  }

  // Rescaled KL over F(B).
  std::vector<double> coef(vp.num_groups(), 0.0);
  if (options.kl_weighting == KlWeighting::PerGroup) {
    for (std::size_t g = 0; g < coef.size(); ++g) {
      if (stats.group_weight_sum[g] > 0.0) {
        coef[g] = static_cast<double>(stats.group_size[g]) / stats.group_weight_sum[g];
      }
    }
  } else {
    double total_weight = 0.0;
    std::size_t total_size = 0;
    for (std::size_t g = 0; g < coef.size(); ++g) {
      total_weight += stats.group_weight_sum[g];
      total_size += stats.group_size[g];
    }
    if (total_weight > 0.0) {
      std::fill(coef.begin(), coef.end(), static_cast<double>(total_size) / total_weight);
    }
  }
  terms.no_active_features = stats.active.empty();

  const auto& space = train.space();
  for (std::size_t a = 0; a < stats.active.size(); ++a) {
    const auto k = stats.active[a];
    const auto g = space.group_of(k);
    const double c = coef[g - 1] * stats.weight[a];
    const std::size_t off = vp.feature_offset(k);
    const std::size_t goff = vp.group_offset(g);

    auto bias = scalar_kl(vp.mu_w(k), vp.rho_w(k), vp.nu_w(g), vp.lambda_w_raw(g));
    double kl = bias.value;
    if (grad) {
      grad->values[off] -= c * bias.d_mu;
      grad->values[off + 1] -= c * bias.d_rho;
      grad->values[goff] -= c * bias.d_nu;
      grad->values[goff + 1] -= c * bias.d_lambda_raw;
    }
    auto mu = vp.mu_v(k);
    auto rho = vp.rho_v(k);
    auto nu = vp.nu_v(g);
    auto lam = vp.lambda_v_raw(g);
    for (std::size_t f = 0; f < d; ++f) {
      auto r = scalar_kl(mu[f], rho[f], nu[f], lam[f]);
      kl += r.value;
      if (grad) {
        grad->values[off + 2 + f] -= c * r.d_mu;
        grad->values[off + 2 + d + f] -= c * r.d_rho;
        grad->values[goff + 2 + f] -= c * r.d_nu;
        grad->values[goff + 2 + d + f] -= c * r.d_lambda_raw;
      }
    }
    terms.kl_features += c * kl;
  }

  auto bias_kl = scalar_kl(mu_w0, rho_w0, vp.global(VariationalParams::kNuW0),
                           vp.global(VariationalParams::kLambdaW0));
  terms.kl_bias = bias_kl.value;
  if (grad) {
    grad->values[VariationalParams::kMuW0] -= bias_kl.d_mu;
    grad->values[VariationalParams::kRhoW0] -= bias_kl.d_rho;
    grad->values[VariationalParams::kNuW0] -= bias_kl.d_nu;
    grad->values[VariationalParams::kLambdaW0] -= bias_kl.d_lambda_raw;
  }
  terms.value = terms.expected_loglik - terms.kl_features - terms.kl_bias;
  return terms;
}

ElboTerms elbo_batch(const VariationalParams& vp, const Dataset& train,
                     std::span<const std::size_t> batch, const BatchStats& stats,
                     std::size_t samples, Rng& rng, const ElboOptions& options) {
  auto noise = draw_noise(stats, samples, vp.num_features(), vp.dim(), rng);
  return evaluate_elbo(vp, train, batch, stats, noise, options);
}

Gradient elbo_gradients(const VariationalParams& vp, const Dataset& train,
                        std::span<const std::size_t> batch, const BatchStats& stats,
                        std::size_t samples, Rng& rng, const ElboOptions& options) {
  auto noise = draw_noise(stats, samples, vp.num_features(), vp.dim(), rng);
  Gradient grad;
  evaluate_elbo(vp, train, batch, stats, noise, options, &grad);
  return grad;
}

}  // namespace vfm
