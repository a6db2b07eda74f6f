#pragma once

#include <cstddef>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace vfm {

enum class Task { Regression, Classification };

Task parse_task(std::string_view name);
std::string_view to_string(Task task);

/// Raised for malformed input. `line()` is 1-based, 0 when not tied to a line.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what, std::size_t line = 0);
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Contiguous block of feature indices sharing one prior group.
struct GroupRange {
  std::string name;
  std::size_t begin = 0;  // inclusive
  std::size_t end = 0;    // exclusive
};

/// Maps every feature index to a 1-based group id.
class FeatureSpace {
 public:
  FeatureSpace() = default;
  /// Ranges must tile [0, K) without gaps or overlaps, in order.
  explicit FeatureSpace(std::vector<GroupRange> ranges);

  std::size_t num_features() const noexcept { return group_of_.size(); }
  std::size_t num_groups() const noexcept { return ranges_.size(); }
  /// Group id in 1..G.
  std::uint32_t group_of(std::size_t feature) const { return group_of_.at(feature); }
  const std::vector<GroupRange>& ranges() const noexcept { return ranges_; }
  const GroupRange& group(std::uint32_t id) const { return ranges_.at(id - 1); }
  std::uint32_t group_id(std::string_view name) const;

  bool operator==(const FeatureSpace& other) const;

 private:
  std::vector<GroupRange> ranges_;
  std::vector<std::uint32_t> group_of_;
};

/// Sidecar format: one "group_name start end" line per range, end exclusive.
FeatureSpace read_group_map(std::istream& in);
void write_group_map(std::ostream& out, const FeatureSpace& space);

struct Entry {
  std::uint32_t index = 0;
  double value = 0.0;

  bool operator==(const Entry&) const = default;
};

/// Sparse feature vector in canonical form: strictly increasing indices, no zeros.
struct SparseInstance {
  std::vector<Entry> entries;
  double label = 0.0;

  bool operator==(const SparseInstance&) const = default;
};

/// Sorts entries, drops zeros. Throws DataError on a repeated index.
void canonicalize(SparseInstance& instance);

class Dataset {
 public:
  Dataset() = default;
  Dataset(FeatureSpace space, Task task, std::vector<SparseInstance> instances);

  const FeatureSpace& space() const noexcept { return space_; }
  Task task() const noexcept { return task_; }
  std::size_t size() const noexcept { return instances_.size(); }
  bool empty() const noexcept { return instances_.empty(); }
  const std::vector<SparseInstance>& instances() const noexcept { return instances_; }
  const SparseInstance& operator[](std::size_t i) const { return instances_[i]; }
  /// N_k: number of instances with x_k != 0.
  const std::vector<std::size_t>& feature_counts() const noexcept { return counts_; }

  Dataset subset(std::span<const std::size_t> rows) const;

 private:
  FeatureSpace space_;
  Task task_ = Task::Regression;
  std::vector<SparseInstance> instances_;
  std::vector<std::size_t> counts_;
};

/// Binarization used for classification variants of rating data.
inline double binarize_rating(double rating) { return rating >= 4.0 ? 1.0 : 0.0; }

struct Rating {
  std::string user;
  std::string item;
  double rating = 0.0;
};

/// Dataset plus the label <-> one-hot position tables.
struct UserItemEncoding {
  Dataset data;
  std::vector<std::string> users;  // position i -> label
  std::vector<std::string> items;  // position j -> label (feature N_u + j)

  /// Recovers (user, item) from an encoded instance.
  std::pair<std::string, std::string> decode(const SparseInstance& instance) const;
};

/// Users first (group "user"), then items (group "item"), labels in first-seen order.
UserItemEncoding encode_user_item(std::span<const Rating> ratings, Task task);

Dataset parse_libsvm(std::istream& in, const FeatureSpace& space, Task task);
void write_libsvm(std::ostream& out, const Dataset& data);
void write_libsvm(std::ostream& out, const SparseInstance& instance);

/// Shuffles with `seed`, then cuts consecutive blocks of floor(f * n) rows;
/// the leftover rows go one each to the earliest parts.
std::vector<Dataset> split(const Dataset& data, std::span<const double> fractions,
                           std::uint64_t seed);

/// Same as split() but returns the row indices of each part.
std::vector<std::vector<std::size_t>> split_indices(std::size_t n,
                                                    std::span<const double> fractions,
                                                    std::uint64_t seed);

// MovieLens ingestion ------------------------------------------------------

struct MovieLensRating {
  std::int64_t user = 0;
  std::int64_t item = 0;
  double rating = 0.0;
  std::int64_t timestamp = 0;
};

/// Reads `u.data` (tab), `ratings.dat` (::) or `ratings.csv` (comma, header skipped).
std::vector<MovieLensRating> read_movielens_ratings(std::istream& in);

/// Item id -> title from `u.item` (|) or `movies.dat` (::) or `movies.csv`.
std::vector<std::pair<std::int64_t, std::string>> read_movielens_items(std::istream& in);

/// Uses the raw numeric ids as one-hot positions: K_u = max user id + 1 and
/// item j sits at K_u + j, so id 0 slots exist but never occur.
Dataset encode_movielens(std::span<const MovieLensRating> ratings, Task task);

}  // namespace vfm
