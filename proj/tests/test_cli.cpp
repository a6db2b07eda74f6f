#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

struct TempDir {
  fs::path path;
  TempDir() {
    std::random_device rd;
    path = fs::temp_directory_path() / ("vfm_cli_" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  fs::path operator/(const std::string& s) const { return path / s; }
};

Run vfm(const TempDir& dir, const std::string& args) {
  const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = std::string("\"") + VFM_BINARY + "\" " + args + " >\"" + out.string() + "\" 2>\"" +
                          err.string() + "\"";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

// Tab separated user, item, rating, timestamp with a planted two-factor structure.
fs::path write_ratings(const TempDir& dir, const std::string& name = "ratings.data") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g(0.0, 1.0);
  std::bernoulli_distribution keep(0.35);
  const int users = 60, items = 40;
  std::vector<std::array<double, 2>> u(users), v(items);
  for (auto& x : u) x = {g(rng), g(rng)};
  for (auto& x : v) x = {g(rng), g(rng)};
  const auto path = dir / name;
  std::ofstream out(path);
  for (int i = 0; i < users; ++i) {
    for (int j = 0; j < items; ++j) {
      if (!keep(rng)) continue;
      const double s = 3.2 + 0.8 * (u[i][0] * v[j][0] + u[i][1] * v[j][1]) + 0.3 * g(rng);
      const int r = std::clamp(static_cast<int>(std::lround(s)), 1, 5);
      out << i + 1 << '\t' << j + 1 << '\t' << r << '\t' << 880000000 + i * items + j << '\n';
    }
  }
  return path;
}

std::string without_column(const std::string& csv, const std::string& column) {
  std::istringstream in(csv);
  std::string line, out;
  std::getline(in, line);
  std::vector<std::string> header;
  {
    std::istringstream h(line);
    std::string cell;
    while (std::getline(h, cell, ',')) header.push_back(cell);
  }
  const auto drop = std::find(header.begin(), header.end(), column) - header.begin();
  in.clear();
  in.seekg(0);
  while (std::getline(in, line)) {
    std::istringstream row(line);
    std::string cell;
    for (std::ptrdiff_t c = 0; std::getline(row, cell, ','); ++c) {
      if (c != drop) out += cell + ',';
    }
    out += '\n';
  }
  return out;
}

std::size_t count_lines(const std::string& s) { return std::count(s.begin(), s.end(), '\n'); }

const std::string kQuickTrain = " --epochs 60 --d 3 --quiet";

}  // namespace

TEST_CASE("a missing input exits 2 and names the path") {
  TempDir dir;
  const auto missing = (dir / "nowhere" / "ratings.data").string();
  auto r = vfm(dir, "train --data \"" + missing + "\" --out \"" + (dir / "run").string() + "\"");
  CHECK(r.code == 2);
  CHECK(r.err.find(missing) != std::string::npos);

  r = vfm(dir, "eval --checkpoint \"" + (dir / "none.json").string() + "\" --test \"" + missing + "\"");
  CHECK(r.code == 2);

  r = vfm(dir, "train");
  CHECK(r.code == 2);
  r = vfm(dir, "frobnicate");
  CHECK(r.code == 2);
  r = vfm(dir, "--help");
  CHECK(r.code == 0);
}

TEST_CASE("training twice with one seed gives the same history") {
  TempDir dir;
  const auto data = write_ratings(dir).string();
  for (const char* run : {"a", "b"}) {
    auto r = vfm(dir, "train --data \"" + data + "\" --seed 3 --out \"" + (dir / run).string() + "\"" + kQuickTrain);
    REQUIRE_MESSAGE(r.code == 0, r.err);
  }
  const auto a = slurp(dir / "a" / "history.csv"), b = slurp(dir / "b" / "history.csv");
  CHECK(count_lines(a) > 1);
  CHECK(without_column(a, "wall_time") == without_column(b, "wall_time"));
  CHECK(slurp(dir / "a" / "test.libsvm") == slurp(dir / "b" / "test.libsvm"));

  auto c = vfm(dir, "train --data \"" + data + "\" --seed 4 --out \"" + (dir / "c").string() + "\"" + kQuickTrain);
  REQUIRE(c.code == 0);
  CHECK(without_column(a, "wall_time") != without_column(slurp(dir / "c" / "history.csv"), "wall_time"));
}

TEST_CASE("a config snapshot reproduces the run") {
  TempDir dir;
  const auto data = write_ratings(dir).string();
  auto r = vfm(dir, "train --data \"" + data + "\" --seed 5 --lr 0.02 --out \"" + (dir / "a").string() + "\"" +
                        kQuickTrain);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto snapshot = slurp(dir / "a" / "config.snapshot");
  CHECK(snapshot.find("train.lr=0.02") != std::string::npos);
  CHECK(snapshot.find("train.seed=5") != std::string::npos);

  r = vfm(dir, "--config \"" + (dir / "a" / "config.snapshot").string() + "\" train --out \"" +
                   (dir / "b").string() + "\"");
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(without_column(slurp(dir / "a" / "history.csv"), "wall_time") ==
        without_column(slurp(dir / "b" / "history.csv"), "wall_time"));

  auto a = nlohmann::json::parse(slurp(dir / "a" / "checkpoint.json"));
  auto b = nlohmann::json::parse(slurp(dir / "b" / "checkpoint.json"));
  a["config"].erase("train.out");
  b["config"].erase("train.out");
  CHECK(a == b);
}

TEST_CASE("eval reports every classification metric") {
  TempDir dir;
  const auto data = write_ratings(dir).string();
  auto r = vfm(dir, "train --task classification --data \"" + data + "\" --out \"" + (dir / "run").string() +
                        "\"" + kQuickTrain);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  r = vfm(dir, "eval --run \"" + (dir / "run").string() + "\"");
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto report = nlohmann::json::parse(slurp(dir / "run" / "metrics.json"));
  CHECK(report["task"] == "classification");
  for (const char* predictor : {"mean", "last"}) {
    for (const char* m : {"rmse", "acc", "auc", "map"}) {
      REQUIRE(report[predictor].contains(m));
      const double v = report[predictor][m];
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
  CHECK(r.out.find("auc") != std::string::npos);
}

TEST_CASE("eval rejects empty and mismatched test sets") {
  TempDir dir;
  const auto data = write_ratings(dir).string();
  auto r = vfm(dir, "train --data \"" + data + "\" --out \"" + (dir / "run").string() + "\"" + kQuickTrain);
  REQUIRE_MESSAGE(r.code == 0, r.err);

  // Same feature space, no rows.
  fs::copy_file(dir / "run" / "groups.map", dir / "empty.libsvm.groups");
  std::ofstream(dir / "empty.libsvm").close();
  r = vfm(dir, "eval --checkpoint \"" + (dir / "run" / "checkpoint.json").string() + "\" --test \"" +
                   (dir / "empty.libsvm").string() + "\"");
  CHECK(r.code == 1);
  CHECK(r.err.find("error") != std::string::npos);

  // Ratings with an unseen user and item widen the space.
  {
    std::ofstream other(dir / "other.data");
    other << "1\t1\t4\t1\n500\t700\t2\t2\n";
  }
  r = vfm(dir, "eval --checkpoint \"" + (dir / "run" / "checkpoint.json").string() + "\" --test \"" +
                   (dir / "other.data").string() + "\"");
  CHECK(r.code != 0);
}

TEST_CASE("elicit validates strategies and writes one table per strategy") {
  TempDir dir;
  const std::string quick = " --seeds 2 --epochs 40 --samples 10 --user-iterations 30 --threads 1 --data-dir \"" +
                            (dir / "nodata").string() + "\"";
  auto r = vfm(dir, "elicit --strategy entropy --out \"" + (dir / "x").string() + "\"" + quick);
  CHECK(r.code == 2);

  r = vfm(dir, "elicit --strategy variance --rounds 5 --out \"" + (dir / "one").string() + "\"" + quick);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto table = slurp(dir / "one" / "elicit_variance.csv");
  CHECK(count_lines(table) == 6);
  CHECK(table.rfind("items_revealed,acc_mean,acc_sd,auc_mean,auc_sd,map_mean,map_sd,variance_mean,variance_sd,seeds",
                    0) == 0);
  CHECK(r.err.find("synthetic") != std::string::npos);

  r = vfm(dir, "elicit --strategy random mean variance --rounds 3 --out \"" + (dir / "all").string() + "\"" +
                   quick);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  for (const char* s : {"random", "mean", "variance"}) {
    CHECK(count_lines(slurp(dir / "all" / ("elicit_" + std::string(s) + ".csv"))) == 4);
  }
  std::istringstream pools(slurp(dir / "all" / "elicit_pools.csv"));
  std::string line;
  std::getline(pools, line);
  std::map<std::string, std::set<std::string>> hashes;
  std::size_t rows = 0;
  while (std::getline(pools, line)) {
    const auto a = line.find(','), b = line.rfind(',');
    hashes[line.substr(0, a)].insert(line.substr(b + 1));
    ++rows;
  }
  CHECK(rows == 6);
  CHECK(hashes.size() == 2);
  for (const auto& [seed, set] : hashes) CHECK(set.size() == 1);
}

TEST_CASE("fetch-data from a local directory and a checksummed archive") {
  TempDir dir;
  fs::create_directories(dir / "src" / "ml-100k");
  fs::copy_file(write_ratings(dir), dir / "src" / "ml-100k" / "u.data");
  {
    std::ofstream items(dir / "src" / "ml-100k" / "u.item");
    for (int j = 1; j <= 40; ++j) items << j << "|Movie " << j << " (1995)|01-Jan-1995||\n";
  }
  auto r = vfm(dir, "fetch-data --dataset ml100k --from-archive \"" + (dir / "src").string() + "\" --data-dir \"" +
                        (dir / "data").string() + "\"");
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(fs::is_regular_file(dir / "data" / "ml-100k" / "ratings.libsvm"));
  CHECK(fs::is_regular_file(dir / "data" / "ml-100k" / "ratings.libsvm.groups"));
  CHECK(r.out.find("ml100k:") != std::string::npos);
  CHECK(r.err.find("warning") != std::string::npos);  // not the published row count

  r = vfm(dir, "fetch-data --dataset ml100k --from-archive \"" + (dir / "src").string() +
                   "\" --checksum md5:00000000000000000000000000000000 --data-dir \"" + (dir / "data").string() +
                   "\"");
  CHECK(r.code == 2);

  {
    std::ofstream zip(dir / "ml-100k.zip", std::ios::binary);
    zip << "PK not really an archive";
  }
  r = vfm(dir, "fetch-data --dataset ml100k --from-archive \"" + (dir / "ml-100k.zip").string() +
                   "\" --checksum md5:00000000000000000000000000000000 --data-dir \"" + (dir / "data2").string() +
                   "\"");
  CHECK(r.code == 1);
  CHECK(r.err.find("checksum mismatch") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "data2" / "ml-100k" / "u.data"));

  r = vfm(dir, "fetch-data --dataset ml100k --from-archive \"" + (dir / "ml-100k.zip").string() +
                   "\" --checksum md5:xyz --data-dir \"" + (dir / "data2").string() + "\"");
  CHECK(r.code == 2);
}
