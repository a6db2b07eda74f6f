#include "vfm/fm_core.hpp"

#include <bit>
#include <stdexcept>

namespace vfm {

double predict_raw(const SampledParams& params, const SparseInstance& x) {
  const std::size_t d = params.dim;
  if (params.V.size() != params.w.size() * d) {
    throw std::invalid_argument("embedding matrix does not match K x d");
  }
  double y = params.w0;
  for (const auto& e : x.entries) {
    if (e.index >= params.w.size()) {
      throw std::invalid_argument("feature index " + std::to_string(e.index) +
                                  " outside the parameter set");
    }
    y += params.w[e.index] * e.value;
  }
  double pairwise = 0.0;
  for (std::size_t f = 0; f < d; ++f) {
    double sum = 0.0;
    double sum_sq = 0.0;
    for (const auto& e : x.entries) {
      const double t = params.V[e.index * d + f] * e.value;
      sum += t;
      sum_sq += t * t;
    }
    pairwise += sum * sum - sum_sq;
  }
  return y + 0.5 * pairwise;
}

double predict_mean_response(const SampledParams& params, const SparseInstance& x, Task task) {
  const double y = predict_raw(params, x);
  return task == Task::Classification ? sigmoid(y) : y;
}

VariationalParams::VariationalParams(ModelShape shape)
    : shape_(shape),
      values_(kGlobals + 2 * (shape.dim + 1) * (shape.num_features + shape.num_groups), 0.0) {}

Noise Noise::zeros(std::size_t num_features, std::size_t d) {
  Noise n;
  n.dim = d;
  n.features.assign(num_features * (d + 1), 0.0);
  return n;
}

Noise Noise::draw(std::size_t num_features, std::size_t d, Rng& rng) {
  std::normal_distribution<double> normal;
  Noise n = zeros(num_features, d);
  n.w0 = normal(rng);
  for (auto& e : n.features) e = normal(rng);
  return n;
}

SampledParams reparameterize(const VariationalParams& vp, const Noise& noise) {
  const std::size_t K = vp.num_features();
  const std::size_t d = vp.dim();
  if (noise.dim != d || noise.features.size() != K * (d + 1)) {
    throw std::invalid_argument("noise does not match the parameter shape");
  }
  SampledParams p(K, d);
  p.w0 = vp.global(VariationalParams::kMuW0) + noise.w0 * vp.sigma_w0();
  for (std::size_t k = 0; k < K; ++k) {
    p.w[k] = vp.mu_w(k) + noise.w(k) * softplus(vp.rho_w(k));
    auto mu = vp.mu_v(k);
    auto rho = vp.rho_v(k);
    auto row = p.embedding(k);
    for (std::size_t f = 0; f < d; ++f) {
      row[f] = mu[f] + noise.v(k, f) * softplus(rho[f]);
    }
  }
  return p;
}

SampledParams sample_params(const VariationalParams& vp, Rng& rng) {
  return reparameterize(vp, Noise::draw(vp.num_features(), vp.dim(), rng));
}

SampledParams posterior_mean_params(const VariationalParams& vp) {
  const std::size_t K = vp.num_features();
  const std::size_t d = vp.dim();
  SampledParams p(K, d);
  p.w0 = vp.global(VariationalParams::kMuW0);
  for (std::size_t k = 0; k < K; ++k) {
    p.w[k] = vp.mu_w(k);
    auto mu = vp.mu_v(k);
    std::copy(mu.begin(), mu.end(), p.embedding(k).begin());
  }
  return p;
}

std::uint64_t hash_values(std::span<const double> values) {
  std::uint64_t h = 0x84222325cbf29ce4ULL;
  for (double v : values) h = mix64(h ^ std::bit_cast<std::uint64_t>(v));
  return h;
}

}  // namespace vfm
