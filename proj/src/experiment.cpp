#include "vfm/experiment.hpp"

#include <fstream>
#include <sstream>

namespace vfm {

namespace fs = std::filesystem;

namespace {

std::ifstream open_input(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw MissingInput(path);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInput(path);
  return in;
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

}  // namespace

fs::path ratings_file(std::string_view name, const fs::path& data_dir) {
  if (name == "ml100k") return data_dir / "ml-100k" / "u.data";
  if (name == "ml1m") return data_dir / "ml-1m" / "ratings.dat";
  if (name == "ml25m") return data_dir / "ml-25m" / "ratings.csv";
  throw std::invalid_argument("unknown dataset name: " + std::string(name));
}

fs::path items_file(std::string_view name, const fs::path& data_dir) {
  if (name == "ml100k") return data_dir / "ml-100k" / "u.item";
  if (name == "ml1m") return data_dir / "ml-1m" / "movies.dat";
  if (name == "ml25m") return data_dir / "ml-25m" / "movies.csv";
  throw std::invalid_argument("unknown dataset name: " + std::string(name));
}

Dataset load_dataset(std::string_view source, const fs::path& data_dir, Task task, std::uint64_t seed) {
  if (source == "movie10k") {
    if (task != Task::Classification) {
      throw std::invalid_argument("movie10k is a binary dataset; use --task classification");
    }
    return load_movie10k(data_dir, seed).to_dataset();
  }
  fs::path path;
  if (source == "ml100k" || source == "ml1m" || source == "ml25m") {
    path = ratings_file(source, data_dir);
  } else {
    path = fs::path(source);
  }
  auto in = open_input(path);
  if (ends_with(path.string(), ".libsvm")) {
    auto groups_path = fs::path(path.string() + ".groups");
    if (!fs::exists(groups_path)) groups_path = path.parent_path() / "groups.map";
    auto groups = open_input(groups_path);
    return parse_libsvm(in, read_group_map(groups), task);
  }
  const auto ratings = read_movielens_ratings(in);
  return encode_movielens(ratings, task);
}

ExperimentSplits standard_splits(const Dataset& data, std::uint64_t seed, bool validation) {
  const double outer[] = {0.8, 0.2};
  auto parts = split(data, outer, derive_seed(seed, "split"));
  ExperimentSplits s;
  s.test = std::move(parts[1]);
  if (validation) {
    auto inner = split(parts[0], outer, derive_seed(seed, "valid"));
    s.train = std::move(inner[0]);
    s.validation = std::move(inner[1]);
  } else {
    s.train = std::move(parts[0]);
  }
  return s;
}

PreferenceMatrix load_movie10k(const fs::path& data_dir, std::uint64_t seed, bool* synthetic) {
  if (synthetic) *synthetic = false;
  const auto cached = data_dir / "movie10k.csv";
  if (fs::is_regular_file(cached)) {
    auto in = open_input(cached);
    return read_preference_matrix(in);
  }
  const auto ratings_path = ratings_file("ml25m", data_dir);
  if (fs::is_regular_file(ratings_path)) {
    auto in = open_input(ratings_path);
    return build_movie10k(read_movielens_ratings(in), derive_seed(seed, "movie10k"));
  }
  if (synthetic) *synthetic = true;
  return synthetic_movie10k(derive_seed(seed, "data"));
}

void write_preference_matrix(std::ostream& out, const PreferenceMatrix& m) {
  out << "user_id";
  for (auto id : m.item_ids) out << ',' << id;
  out << '\n';
  for (std::size_t u = 0; u < m.num_users; ++u) {
    out << m.user_ids[u];
    for (std::size_t i = 0; i < m.num_items; ++i) out << ',' << int(m.at(u, i));
    out << '\n';
  }
}

PreferenceMatrix read_preference_matrix(std::istream& in) {
  PreferenceMatrix m;
  std::string line, cell;
  std::size_t lineno = 0;
  auto cells = [&](const std::string& text) {
    std::vector<std::int64_t> out;
    std::stringstream row(text);
    while (std::getline(row, cell, ',')) {
      try {
        std::size_t used = 0;
        out.push_back(std::stoll(cell, &used));
        if (used != cell.size() && cell.find_first_not_of(" \r", used) != std::string::npos) {
          throw DataError("bad matrix cell '" + cell + "'", lineno);
        }
      } catch (const std::logic_error&) {
        throw DataError("bad matrix cell '" + cell + "'", lineno);
      }
    }
    return out;
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1) {
      const auto comma = line.find(',');
      if (comma == std::string::npos) throw DataError("matrix header has no items", 1);
      m.item_ids = cells(line.substr(comma + 1));
      m.num_items = m.item_ids.size();
      continue;
    }
    if (line.empty()) continue;
    auto row = cells(line);
    if (row.size() != m.num_items + 1) throw DataError("matrix row has the wrong length", lineno);
    m.user_ids.push_back(row[0]);
    for (std::size_t i = 1; i < row.size(); ++i) {
      if (row[i] != 0 && row[i] != 1) throw DataError("matrix cells must be 0 or 1", lineno);
      m.values.push_back(static_cast<std::uint8_t>(row[i]));
    }
    ++m.num_users;
  }
  if (m.num_users == 0) throw DataError("empty preference matrix", lineno);
  return m;
}

std::uint64_t pool_hash(const ElicitationSetup& setup) {
  std::vector<double> layout;
  for (const auto* part : {&setup.observed_users, &setup.held_out_users, &setup.interactive_items,
                           &setup.validation_items}) {
    for (auto i : *part) layout.push_back(static_cast<double>(i));
    layout.push_back(-1.0);
  }
  return mix64(hash_values(layout) ^ mix64(hash_values(setup.model->params.values())));
}

ElicitationSeedResult run_elicitation_seed(const fs::path& data_dir, std::uint64_t seed,
                                           const ElicitationProtocol& protocol,
                                           const TrainConfig& train_config,
                                           const UserUpdateConfig& update,
                                           std::span<const Strategy> strategies) {
  ElicitationSeedResult result;
  result.seed = seed;
  const auto matrix = load_movie10k(data_dir, seed, &result.synthetic);
  const auto setup = prepare_elicitation(matrix, protocol, train_config, seed);
  for (auto strategy : strategies) {
    result.strategies.push_back(strategy);
    result.pool_hashes.push_back(pool_hash(setup));
    result.rounds.push_back(
        run_protocol(matrix, setup, protocol, strategy, update, derive_seed(seed, "protocol")));
  }
  return result;
}

TestMetrics evaluate(const VariationalParams& vp, const Dataset& test, const RmseOptions& rmse_options) {
  if (test.size() == 0) throw MetricError("empty test set");
  const auto scores = predict(posterior_mean_params(vp), test);
  PredictionSet p;
  for (std::size_t i = 0; i < test.size(); ++i) p.add(test[i].label, scores[i]);
  TestMetrics m;
  if (test.task() == Task::Regression) {
    m.rmse = rmse(p, rmse_options);
  } else {
    m.rmse = rmse(p, {.clamp = false});
    m.acc = accuracy(p);
    m.auc = auc(p);
    m.map = mean_average_precision(p);
  }
  return m;
}

double primary(const TestMetrics& m, Task task) { return task == Task::Regression ? m.rmse : m.auc; }

}  // namespace vfm
