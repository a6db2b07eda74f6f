#include "vfm/sparse_data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "vfm/random.hpp"

namespace vfm {

namespace {

bool parse_double(std::string_view text, double& out) {
  if (text.empty()) return false;
  if (text.front() == '+') text.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size() && std::isfinite(out);
}

template <typename Int>
bool parse_int(std::string_view text, Int& out) {
  if (text.empty()) return false;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size();
}

std::vector<std::string_view> split_whitespace(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

std::vector<std::string_view> split_on(std::string_view line, std::string_view sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + sep.size();
  }
}

// Comma split honouring double quotes (movies.csv titles).
std::vector<std::string> split_csv(std::string_view line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(field));
      field.clear();
    } else {
      field += c;
    }
  }
  out.push_back(std::move(field));
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xe ? 3 : (c >> 3) == 0x1e ? 4 : 0;
    if (len == 0 || i + len > s.size()) return false;
    for (std::size_t k = 1; k < len; ++k) {
      if ((static_cast<unsigned char>(s[i + k]) >> 6) != 0x2) return false;
    }
    i += len;
  }
  return true;
}

// MovieLens 100k/1M item files are Latin-1.
std::string to_utf8(std::string_view s) {
  if (valid_utf8(s)) return std::string(s);
  std::string out;
  for (char ch : s) {
    auto c = static_cast<unsigned char>(ch);
    if (c < 0x80) {
      out += ch;
    } else {
      out += static_cast<char>(0xc0 | (c >> 6));
      out += static_cast<char>(0x80 | (c & 0x3f));
    }
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

Task parse_task(std::string_view name) {
  if (name == "regression") return Task::Regression;
  if (name == "classification") return Task::Classification;
  throw std::invalid_argument("unknown task '" + std::string(name) + "'");
}

std::string_view to_string(Task task) {
  return task == Task::Regression ? "regression" : "classification";
}

DataError::DataError(const std::string& what, std::size_t line)
    : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what),
      line_(line) {}

// FeatureSpace ---------------------------------------------------------------

FeatureSpace::FeatureSpace(std::vector<GroupRange> ranges) : ranges_(std::move(ranges)) {
  std::size_t expected = 0;
  for (std::size_t g = 0; g < ranges_.size(); ++g) {
    const auto& r = ranges_[g];
    if (r.begin != expected || r.end < r.begin) {
      throw DataError("group '" + r.name + "' does not continue the feature range at " +
                      std::to_string(expected));
    }
    for (std::size_t k = r.begin; k < r.end; ++k) {
      group_of_.push_back(static_cast<std::uint32_t>(g + 1));
    }
    expected = r.end;
  }
}

std::uint32_t FeatureSpace::group_id(std::string_view name) const {
  for (std::size_t g = 0; g < ranges_.size(); ++g) {
    if (ranges_[g].name == name) return static_cast<std::uint32_t>(g + 1);
  }
  throw std::out_of_range("no feature group named '" + std::string(name) + "'");
}

bool FeatureSpace::operator==(const FeatureSpace& other) const {
  if (ranges_.size() != other.ranges_.size()) return false;
  for (std::size_t g = 0; g < ranges_.size(); ++g) {
    const auto& a = ranges_[g];
    const auto& b = other.ranges_[g];
    if (a.name != b.name || a.begin != b.begin || a.end != b.end) return false;
  }
  return true;
}

FeatureSpace read_group_map(std::istream& in) {
  std::vector<GroupRange> ranges;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto tokens = split_whitespace(line);
    if (tokens.empty() || tokens[0].front() == '#') continue;
    GroupRange r;
    if (tokens.size() != 3 || !parse_int(tokens[1], r.begin) || !parse_int(tokens[2], r.end)) {
      throw DataError("expected 'group_name start end'", lineno);
    }
    r.name = std::string(tokens[0]);
    ranges.push_back(std::move(r));
  }
  return FeatureSpace(std::move(ranges));
}

void write_group_map(std::ostream& out, const FeatureSpace& space) {
  for (const auto& r : space.ranges()) {
    out << r.name << ' ' << r.begin << ' ' << r.end << '\n';
  }
}

// Instances ------------------------------------------------------------------

void canonicalize(SparseInstance& instance) {
  auto& e = instance.entries;
  std::erase_if(e, [](const Entry& x) { return x.value == 0.0; });
  std::sort(e.begin(), e.end(), [](const Entry& a, const Entry& b) { return a.index < b.index; });
  for (std::size_t i = 1; i < e.size(); ++i) {
    if (e[i].index == e[i - 1].index) {
      throw DataError("feature " + std::to_string(e[i].index) + " appears twice");
    }
  }
}

Dataset::Dataset(FeatureSpace space, Task task, std::vector<SparseInstance> instances)
    : space_(std::move(space)), task_(task), instances_(std::move(instances)) {
  counts_.assign(space_.num_features(), 0);
  for (const auto& inst : instances_) {
    for (std::size_t i = 0; i < inst.entries.size(); ++i) {
      const auto& e = inst.entries[i];
      if (e.index >= counts_.size()) {
        throw DataError("feature index " + std::to_string(e.index) + " outside [0, " +
                        std::to_string(counts_.size()) + ")");
      }
      if (e.value == 0.0 || (i > 0 && inst.entries[i - 1].index >= e.index)) {
        throw DataError("instance not in canonical form");
      }
      ++counts_[e.index];
    }
    if (task_ == Task::Classification && inst.label != 0.0 && inst.label != 1.0) {
      throw DataError("classification label must be 0 or 1");
    }
  }
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  std::vector<SparseInstance> picked;
  picked.reserve(rows.size());
  for (auto r : rows) picked.push_back(instances_.at(r));
  return Dataset(space_, task_, std::move(picked));
}

// User/item encoding -----------------------------------------------------------

std::pair<std::string, std::string> UserItemEncoding::decode(
    const SparseInstance& instance) const {
  if (instance.entries.size() != 2) throw DataError("not a user/item pair");
  const std::size_t nu = users.size();
  const auto u = instance.entries[0].index;
  const auto i = instance.entries[1].index;
  if (u >= nu || i < nu || i - nu >= items.size()) throw DataError("not a user/item pair");
  return {users[u], items[i - nu]};
}

UserItemEncoding encode_user_item(std::span<const Rating> ratings, Task task) {
  if (ratings.empty()) throw DataError("no ratings to encode");
  UserItemEncoding enc;
  std::unordered_map<std::string, std::uint32_t> user_pos;
  std::unordered_map<std::string, std::uint32_t> item_pos;
  for (const auto& r : ratings) {
    if (user_pos.emplace(r.user, static_cast<std::uint32_t>(enc.users.size())).second) {
      enc.users.push_back(r.user);
    }
    if (item_pos.emplace(r.item, static_cast<std::uint32_t>(enc.items.size())).second) {
      enc.items.push_back(r.item);
    }
  }
  const auto nu = static_cast<std::uint32_t>(enc.users.size());
  const std::size_t ni = enc.items.size();
  std::vector<SparseInstance> rows;
  rows.reserve(ratings.size());
  for (const auto& r : ratings) {
    SparseInstance inst;
    inst.entries = {{user_pos[r.user], 1.0}, {nu + item_pos[r.item], 1.0}};
    inst.label = task == Task::Classification ? binarize_rating(r.rating) : r.rating;
    rows.push_back(std::move(inst));
  }
  FeatureSpace space({{"user", 0, nu}, {"item", nu, nu + ni}});
  enc.data = Dataset(std::move(space), task, std::move(rows));
  return enc;
}

// libsvm -----------------------------------------------------------------------

Dataset parse_libsvm(std::istream& in, const FeatureSpace& space, Task task) {
  std::vector<SparseInstance> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto tokens = split_whitespace(line);
    if (tokens.empty()) continue;
    SparseInstance inst;
    if (!parse_double(tokens[0], inst.label)) {
      throw DataError("malformed label '" + std::string(tokens[0]) + "'", lineno);
    }
    if (task == Task::Classification && inst.label != 0.0 && inst.label != 1.0) {
      throw DataError("classification label must be 0 or 1", lineno);
    }
    for (std::size_t t = 1; t < tokens.size(); ++t) {
      auto colon = tokens[t].find(':');
      if (colon == std::string_view::npos) {
        throw DataError("expected idx:val, got '" + std::string(tokens[t]) + "'", lineno);
      }
      Entry e;
      if (!parse_int(tokens[t].substr(0, colon), e.index)) {
        throw DataError("malformed index in '" + std::string(tokens[t]) + "'", lineno);
      }
      if (!parse_double(tokens[t].substr(colon + 1), e.value)) {
        throw DataError("non-numeric value in '" + std::string(tokens[t]) + "'", lineno);
      }
      if (e.index >= space.num_features()) {
        throw DataError("feature index " + std::to_string(e.index) + " >= K=" +
                            std::to_string(space.num_features()),
                        lineno);
      }
      inst.entries.push_back(e);
    }
    try {
      canonicalize(inst);
    } catch (const DataError& err) {
      throw DataError(err.what(), lineno);
    }
    rows.push_back(std::move(inst));
  }
  return Dataset(space, task, std::move(rows));
}

void write_libsvm(std::ostream& out, const SparseInstance& instance) {
  out << format_double(instance.label);
  for (const auto& e : instance.entries) {
    out << ' ' << e.index << ':' << format_double(e.value);
  }
  out << '\n';
}

void write_libsvm(std::ostream& out, const Dataset& data) {
  for (const auto& inst : data.instances()) write_libsvm(out, inst);
}

// Splits -----------------------------------------------------------------------

std::vector<std::vector<std::size_t>> split_indices(std::size_t n,
                                                    std::span<const double> fractions,
                                                    std::uint64_t seed) {
  if (fractions.empty()) throw std::invalid_argument("split needs at least one fraction");
  double total = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0 && f <= 1.0)) {
      throw std::invalid_argument("split fraction " + format_double(f) + " outside (0, 1]");
    }
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw std::invalid_argument("split fractions sum to " + format_double(total));
  }
  std::vector<std::size_t> sizes;
  std::size_t assigned = 0;
  for (double f : fractions) {
    auto s = static_cast<std::size_t>(std::floor(f * static_cast<double>(n) + 1e-9));
    sizes.push_back(s);
    assigned += s;
  }
  for (std::size_t i = 0; assigned < n; i = (i + 1) % sizes.size()) {
    ++sizes[i];
    ++assigned;
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<std::vector<std::size_t>> parts;
  std::size_t pos = 0;
  for (auto s : sizes) {
    parts.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(pos),
                       order.begin() + static_cast<std::ptrdiff_t>(pos + s));
    pos += s;
  }
  return parts;
}

std::vector<Dataset> split(const Dataset& data, std::span<const double> fractions,
                           std::uint64_t seed) {
  std::vector<Dataset> out;
  for (const auto& rows : split_indices(data.size(), fractions, seed)) {
    out.push_back(data.subset(rows));
  }
  return out;
}

// MovieLens --------------------------------------------------------------------

std::vector<MovieLensRating> read_movielens_ratings(std::istream& in) {
  std::vector<MovieLensRating> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view view = trim(line);
    if (view.empty()) continue;
    std::vector<std::string_view> fields;
    if (view.find("::") != std::string_view::npos) {
      fields = split_on(view, "::");
    } else if (view.find('\t') != std::string_view::npos) {
      fields = split_on(view, "\t");
    } else {
      fields = split_on(view, ",");
    }
    MovieLensRating r;
    if (fields.size() < 3 || !parse_int(trim(fields[0]), r.user) ||
        !parse_int(trim(fields[1]), r.item) || !parse_double(trim(fields[2]), r.rating)) {
      std::int64_t first = 0;
      if (lineno == 1 && !fields.empty() && !parse_int(trim(fields[0]), first)) continue;  // header
      throw DataError("malformed rating line", lineno);
    }
    if (fields.size() > 3 && !parse_int(trim(fields[3]), r.timestamp)) {
      throw DataError("malformed timestamp", lineno);
    }
    if (r.user < 0 || r.item < 0) throw DataError("negative id", lineno);
    out.push_back(r);
  }
  return out;
}

std::vector<std::pair<std::int64_t, std::string>> read_movielens_items(std::istream& in) {
  std::vector<std::pair<std::int64_t, std::string>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view view = line;
    if (!view.empty() && view.back() == '\r') view.remove_suffix(1);
    if (trim(view).empty()) continue;
    std::int64_t id = 0;
    std::string title;
    bool ok = false;
    if (view.find("::") != std::string_view::npos) {
      auto f = split_on(view, "::");
      ok = f.size() >= 2 && parse_int(f[0], id);
      if (ok) title = std::string(f[1]);
    } else if (view.find('|') != std::string_view::npos) {
      auto f = split_on(view, "|");
      ok = f.size() >= 2 && parse_int(f[0], id);
      if (ok) title = std::string(f[1]);
    } else {
      auto f = split_csv(view);
      ok = f.size() >= 2 && parse_int(std::string_view(f[0]), id);
      if (ok) title = f[1];
    }
    if (!ok) {
      if (lineno == 1) continue;
      throw DataError("malformed item line", lineno);
    }
    out.emplace_back(id, to_utf8(title));
  }
  return out;
}

Dataset encode_movielens(std::span<const MovieLensRating> ratings, Task task) {
  if (ratings.empty()) throw DataError("no ratings to encode");
  std::int64_t max_user = 0;
  std::int64_t max_item = 0;
  for (const auto& r : ratings) {
    max_user = std::max(max_user, r.user);
    max_item = std::max(max_item, r.item);
  }
  const auto nu = static_cast<std::uint32_t>(max_user + 1);
  const auto ni = static_cast<std::uint32_t>(max_item + 1);
  std::vector<SparseInstance> rows;
  rows.reserve(ratings.size());
  for (const auto& r : ratings) {
    SparseInstance inst;
    inst.entries = {{static_cast<std::uint32_t>(r.user), 1.0},
                    {nu + static_cast<std::uint32_t>(r.item), 1.0}};
    inst.label = task == Task::Classification ? binarize_rating(r.rating) : r.rating;
    rows.push_back(std::move(inst));
  }
  return Dataset(FeatureSpace({{"user", 0, nu}, {"item", nu, nu + ni}}), task, std::move(rows));
}

}  // namespace vfm
