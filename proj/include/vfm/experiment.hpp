#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>

#include "vfm/elicitation.hpp"
#include "vfm/metrics.hpp"
#include "vfm/sparse_data.hpp"
#include "vfm/trainer.hpp"

namespace vfm {

/// An input file or directory that does not exist.
class MissingInput : public std::runtime_error {
 public:
  explicit MissingInput(const std::filesystem::path& path)
      : std::runtime_error("no such file: " + path.string()), path_(path) {}
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
};

/// Where the named datasets live under a data directory.
std::filesystem::path ratings_file(std::string_view name, const std::filesystem::path& data_dir);
std::filesystem::path items_file(std::string_view name, const std::filesystem::path& data_dir);

/// Loads `source`, which is a dataset name (ml100k, ml1m, ml25m, movie10k)
/// resolved under `data_dir`, a MovieLens ratings file, or a libsvm file
/// with a group map next to it (same path plus ".groups").
Dataset load_dataset(std::string_view source, const std::filesystem::path& data_dir, Task task,
                     std::uint64_t seed = 0);

struct ExperimentSplits {
  Dataset train;
  Dataset validation;  // empty when not requested
  Dataset test;
};

/// 80/20 train/test, then 20% of the training part held out for early
/// stopping when `validation` is set.
ExperimentSplits standard_splits(const Dataset& data, std::uint64_t seed, bool validation = true);

/// The Movie10k matrix: data_dir/movie10k.csv when present, else built from
/// ml-25m ratings when present, else the planted synthetic stand-in.
PreferenceMatrix load_movie10k(const std::filesystem::path& data_dir, std::uint64_t seed,
                               bool* synthetic = nullptr);

/// "user_id,item_id..." header, then one 0/1 row per user.
void write_preference_matrix(std::ostream& out, const PreferenceMatrix& matrix);
PreferenceMatrix read_preference_matrix(std::istream& in);

/// Identifies the user and item splits and the frozen model of a setup.
std::uint64_t pool_hash(const ElicitationSetup& setup);

struct ElicitationSeedResult {
  std::uint64_t seed = 0;
  bool synthetic = false;  // planted stand-in instead of real ratings
  std::vector<Strategy> strategies;
  std::vector<std::uint64_t> pool_hashes;  // per strategy run
  std::vector<std::vector<RoundMetrics>> rounds;  // per strategy
};

/// One seed of the simulated protocol: load Movie10k, train the item model
/// on the observed users, then run every strategy on the same setup.
ElicitationSeedResult run_elicitation_seed(const std::filesystem::path& data_dir, std::uint64_t seed,
                                           const ElicitationProtocol& protocol,
                                           const TrainConfig& train_config,
                                           const UserUpdateConfig& update,
                                           std::span<const Strategy> strategies);

/// Test metrics of a parameter set. Classification also gets acc, auc and
/// map; its rmse is over predicted probabilities.
struct TestMetrics {
  double rmse = 0.0;
  double acc = 0.0;
  double auc = 0.0;
  double map = 0.0;
};
TestMetrics evaluate(const VariationalParams& vp, const Dataset& test, const RmseOptions& rmse = {});
/// rmse or auc, whichever is the task's primary metric.
double primary(const TestMetrics& m, Task task);

}  // namespace vfm
