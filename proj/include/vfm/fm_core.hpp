#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "vfm/random.hpp"
#include "vfm/sparse_data.hpp"

namespace vfm {

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// log(1 + exp(x)) without overflow.
inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

/// Inverse of softplus for y > 0.
inline double softplus_inverse(double y) {
  return y > 30.0 ? y + std::log(-std::expm1(-y)) : std::log(std::expm1(y));
}

/// log(sigmoid(x)) = -softplus(-x).
inline double log_sigmoid(double x) { return -softplus(-x); }

/// Concrete FM parameters (w0, w, V). V is K x d, row-major.
struct SampledParams {
  double w0 = 0.0;
  std::vector<double> w;
  std::vector<double> V;
  std::size_t dim = 0;

  SampledParams() = default;
  SampledParams(std::size_t num_features, std::size_t d)
      : w(num_features, 0.0), V(num_features * d, 0.0), dim(d) {}

  std::size_t num_features() const noexcept { return w.size(); }
  std::span<const double> embedding(std::size_t k) const {
    return std::span<const double>(V).subspan(k * dim, dim);
  }
  std::span<double> embedding(std::size_t k) { return std::span<double>(V).subspan(k * dim, dim); }
};

/// y(x) = w0 + <w, x> + 1/2 sum_f [(sum_k v_kf x_k)^2 - sum_k v_kf^2 x_k^2],
/// O(|entries| * d).
double predict_raw(const SampledParams& params, const SparseInstance& x);

/// Identity link for regression, sigmoid for classification.
double predict_mean_response(const SampledParams& params, const SparseInstance& x, Task task);

struct ModelShape {
  std::size_t num_features = 0;  // K
  std::size_t dim = 0;           // d
  std::size_t num_groups = 0;    // G

  bool operator==(const ModelShape&) const = default;
};

/// Mean-field Gaussian posterior plus learned prior hyper-parameters, stored
/// as one flat vector of unconstrained values:
///
///   [mu_w0, rho_w0, nu_w0, lambda_w0_raw, alpha_raw]
///   K feature blocks: [mu_w, rho_w, mu_v(d), rho_v(d)]
///   G group blocks:   [nu_w, lambda_w_raw, nu_v(d), lambda_v_raw(d)]
///
/// for 2(d+1)(K+G) + 5 values. Scales, precisions and alpha are the
/// softplus of their raw entries. Group ids are 1-based as in FeatureSpace.
class VariationalParams {
 public:
  static constexpr std::size_t kMuW0 = 0;
  static constexpr std::size_t kRhoW0 = 1;
  static constexpr std::size_t kNuW0 = 2;
  static constexpr std::size_t kLambdaW0 = 3;
  static constexpr std::size_t kAlpha = 4;
  static constexpr std::size_t kGlobals = 5;

  VariationalParams() = default;
  explicit VariationalParams(ModelShape shape);

  const ModelShape& shape() const noexcept { return shape_; }
  std::size_t num_features() const noexcept { return shape_.num_features; }
  std::size_t dim() const noexcept { return shape_.dim; }
  std::size_t num_groups() const noexcept { return shape_.num_groups; }
  std::size_t block_size() const noexcept { return 2 * (shape_.dim + 1); }
  std::size_t size() const noexcept { return values_.size(); }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }

  std::size_t feature_offset(std::size_t k) const { return kGlobals + k * block_size(); }
  std::size_t group_offset(std::uint32_t g) const {
    return kGlobals + (shape_.num_features + g - 1) * block_size();
  }

  double& global(std::size_t slot) { return values_[slot]; }
  double global(std::size_t slot) const { return values_[slot]; }

  // Feature k posterior.
  double& mu_w(std::size_t k) { return values_[feature_offset(k)]; }
  double mu_w(std::size_t k) const { return values_[feature_offset(k)]; }
  double& rho_w(std::size_t k) { return values_[feature_offset(k) + 1]; }
  double rho_w(std::size_t k) const { return values_[feature_offset(k) + 1]; }
  std::span<double> mu_v(std::size_t k) { return block(feature_offset(k) + 2); }
  std::span<const double> mu_v(std::size_t k) const { return block(feature_offset(k) + 2); }
  std::span<double> rho_v(std::size_t k) { return block(feature_offset(k) + 2 + shape_.dim); }
  std::span<const double> rho_v(std::size_t k) const {
    return block(feature_offset(k) + 2 + shape_.dim);
  }

  // Group g prior.
  double& nu_w(std::uint32_t g) { return values_[group_offset(g)]; }
  double nu_w(std::uint32_t g) const { return values_[group_offset(g)]; }
  double& lambda_w_raw(std::uint32_t g) { return values_[group_offset(g) + 1]; }
  double lambda_w_raw(std::uint32_t g) const { return values_[group_offset(g) + 1]; }
  std::span<double> nu_v(std::uint32_t g) { return block(group_offset(g) + 2); }
  std::span<const double> nu_v(std::uint32_t g) const { return block(group_offset(g) + 2); }
  std::span<double> lambda_v_raw(std::uint32_t g) {
    return block(group_offset(g) + 2 + shape_.dim);
  }
  std::span<const double> lambda_v_raw(std::uint32_t g) const {
    return block(group_offset(g) + 2 + shape_.dim);
  }

  double sigma_w0() const { return softplus(values_[kRhoW0]); }
  double noise_precision() const { return softplus(values_[kAlpha]); }

  bool operator==(const VariationalParams&) const = default;

 private:
  std::span<double> block(std::size_t offset) {
    return std::span<double>(values_).subspan(offset, shape_.dim);
  }
  std::span<const double> block(std::size_t offset) const {
    return std::span<const double>(values_).subspan(offset, shape_.dim);
  }

  ModelShape shape_;
  std::vector<double> values_;
};

/// Standard-normal draws for one reparameterized sample, laid out as
/// [eps_w, eps_v(d)] per feature.
struct Noise {
  double w0 = 0.0;
  std::vector<double> features;
  std::size_t dim = 0;

  static Noise zeros(std::size_t num_features, std::size_t d);
  static Noise draw(std::size_t num_features, std::size_t d, Rng& rng);

  double w(std::size_t k) const { return features[k * (dim + 1)]; }
  double v(std::size_t k, std::size_t f) const { return features[k * (dim + 1) + 1 + f]; }
};

/// theta = mu + eps * softplus(rho), scalar by scalar.
SampledParams reparameterize(const VariationalParams& vp, const Noise& noise);

/// Fresh independent N(0,1) noise per scalar.
SampledParams sample_params(const VariationalParams& vp, Rng& rng);

/// (mu_w0, mu_w, mu_V): the noise-free point estimate.
SampledParams posterior_mean_params(const VariationalParams& vp);

/// Order-sensitive 64-bit hash of the raw parameter values.
std::uint64_t hash_values(std::span<const double> values);

}  // namespace vfm
