#include "vfm/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace vfm {

SparseAdam::SparseAdam(std::size_t num_params, AdamOptions options)
    : options_(options), m_(num_params, 0.0), v_(num_params, 0.0), counts_(num_params, 0) {}

void SparseAdam::step(std::span<double> params, std::span<const double> grad,
                      std::span<const CoordRange> ranges) {
  if (params.size() != m_.size() || grad.size() != m_.size()) {
    throw std::invalid_argument("Adam state does not match the parameter vector");
  }
  ++steps_;
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  for (const auto& r : ranges) {
    for (std::size_t i = r.begin; i < r.end; ++i) {
      const double g = grad[i];
      m_[i] = b1 * m_[i] + (1.0 - b1) * g;
      v_[i] = b2 * v_[i] + (1.0 - b2) * g * g;
      const auto t = static_cast<double>(++counts_[i]);
      const double m_hat = m_[i] / (1.0 - std::pow(b1, t));
      const double v_hat = v_[i] / (1.0 - std::pow(b2, t));
      params[i] += options_.learning_rate * m_hat / (std::sqrt(v_hat) + options_.epsilon);
    }
  }
}

std::vector<CoordRange> trainable_ranges(const VariationalParams& vp,
                                         std::span<const std::uint32_t> touched_features) {
  std::vector<CoordRange> ranges;
  ranges.reserve(touched_features.size() + 2);
  ranges.push_back({0, VariationalParams::kGlobals});
  const std::size_t b = vp.block_size();
  for (auto k : touched_features) {
    const std::size_t off = vp.feature_offset(k);
    if (!ranges.empty() && ranges.back().end == off) {
      ranges.back().end = off + b;
    } else {
      ranges.push_back({off, off + b});
    }
  }
  if (vp.num_groups() > 0) {
    ranges.push_back({vp.group_offset(1), vp.size()});
  }
  return ranges;
}

void IterateAverage::record(const VariationalParams& vp) {
  const auto values = vp.values();
  if (sum_.empty()) sum_.assign(values.size(), 0.0);
  if (sum_.size() != values.size()) throw std::invalid_argument("iterate shape changed");
  for (std::size_t i = 0; i < values.size(); ++i) sum_[i] += values[i];
  ++count_;
}

std::vector<double> IterateAverage::mean() const {
  std::vector<double> out(sum_.size());
  const auto n = static_cast<double>(count_);
  for (std::size_t i = 0; i < sum_.size(); ++i) out[i] = sum_[i] / n;
  return out;
}

VariationalParams IterateAverage::averaged(const VariationalParams& last) const {
  if (count_ == 0) return last;
  if (sum_.size() != last.size()) throw std::invalid_argument("iterate shape changed");
  VariationalParams out = last;
  const auto n = static_cast<double>(count_);
  auto values = out.values();
  values[VariationalParams::kMuW0] = sum_[VariationalParams::kMuW0] / n;
  const std::size_t d = last.dim();
  for (std::size_t k = 0; k < last.num_features(); ++k) {
    const std::size_t off = last.feature_offset(k);
    values[off] = sum_[off] / n;
    for (std::size_t f = 0; f < d; ++f) values[off + 2 + f] = sum_[off + 2 + f] / n;
  }
  return out;
}

}  // namespace vfm
