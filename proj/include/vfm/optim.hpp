#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "vfm/fm_core.hpp"

namespace vfm {

struct AdamOptions {
  double learning_rate = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Half-open coordinate interval [begin, end).
struct CoordRange {
  std::size_t begin = 0;
  std::size_t end = 0;
};

/// Adam ascent with lazy moments: only coordinates inside the ranges passed
/// to step() update m, v and their own bias-correction counter.
class SparseAdam {
 public:
  SparseAdam() = default;
  SparseAdam(std::size_t num_params, AdamOptions options);

  void step(std::span<double> params, std::span<const double> grad,
            std::span<const CoordRange> ranges);

  std::size_t step_count() const noexcept { return steps_; }
  std::uint32_t coordinate_steps(std::size_t i) const { return counts_.at(i); }
  const AdamOptions& options() const noexcept { return options_; }

 private:
  AdamOptions options_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::vector<std::uint32_t> counts_;
  std::size_t steps_ = 0;
};

/// Coordinates updated for a batch: globals, blocks of the touched
/// features, and every group prior block.
std::vector<CoordRange> trainable_ranges(const VariationalParams& vp,
                                         std::span<const std::uint32_t> touched_features);

/// Running arithmetic mean of recorded iterates. The averaged predictor
/// uses the mean of posterior means only; scales and hyper-parameters
/// come from the iterate passed to averaged().
class IterateAverage {
 public:
  void record(const VariationalParams& vp);
  std::size_t count() const noexcept { return count_; }
  /// Mean of the recorded values, coordinate by coordinate.
  std::vector<double> mean() const;
  VariationalParams averaged(const VariationalParams& last) const;

 private:
  std::vector<double> sum_;
  std::size_t count_ = 0;
};

}  // namespace vfm
