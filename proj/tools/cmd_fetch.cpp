#include <filesystem>
#include <fstream>
#include <iostream>
#include <regex>

#include <httplib.h>

#include "archive.hpp"
#include "commands.hpp"
#include "vfm/experiment.hpp"

namespace vfm::tools {

namespace fs = std::filesystem;

CLI::App* add_fetch(CLI::App& app, FetchOptions& o) {
  auto* cmd = app.add_subcommand("fetch-data", "Download or unpack MovieLens and build the derived files");
  cmd->add_option("--dataset", o.datasets, "ml100k, ml1m and/or ml25m")
      ->check(CLI::IsMember({"ml100k", "ml1m", "ml25m"}))
      ->capture_default_str();
  cmd->add_option("--data-dir", o.data_dir, "Destination directory");
  cmd->add_option("--from-archive", o.from_archive, "Local zip archive or unpacked directory; no network");
  cmd->add_option("--checksum", o.checksum, "Expected archive digest, md5:<hex> or sha256:<hex>");
  cmd->add_option("--base-url", o.base_url, "Where the zip archives are published")->capture_default_str();
  return cmd;
}

namespace {

struct Source {
  const char* name;
  const char* folder;
  const char* ratings;
  const char* items;
  std::size_t expected_ratings;
};

constexpr Source kSources[] = {
    {"ml100k", "ml-100k", "u.data", "u.item", 100000},
    {"ml1m", "ml-1m", "ratings.dat", "movies.dat", 1000209},
    {"ml25m", "ml-25m", "ratings.csv", "movies.csv", 25000095},
};

const Source& source_of(const std::string& name) {
  for (const auto& s : kSources) {
    if (name == s.name) return s;
  }
  throw UsageError("unknown dataset " + name);
}

// First 32- or 64-digit hex run in a published checksum file.
std::optional<Checksum> checksum_in(const std::string& text) {
  std::smatch m;
  static const std::regex hex("\\b([0-9a-fA-F]{64}|[0-9a-fA-F]{32})\\b");
  if (!std::regex_search(text, m, hex)) return std::nullopt;
  return parse_checksum(m[1].str());
}

std::string download(const std::string& url) {
  static const std::regex parts("^(https?://[^/]+)(/.*)$");
  std::smatch m;
  if (!std::regex_match(url, m, parts)) throw UsageError("malformed URL " + url);
  httplib::Client client(m[1].str());
  client.set_follow_location(true);
  client.set_connection_timeout(15);
  client.set_read_timeout(120);
  auto res = client.Get(m[2].str());
  if (!res) {
    throw std::runtime_error("download of " + url + " failed (" + httplib::to_string(res.error()) +
                             "); use --from-archive when offline");
  }
  if (res->status != 200) throw std::runtime_error("download of " + url + " returned HTTP " +
                                                   std::to_string(res->status));
  return res->body;
}

void write_file(const fs::path& path, const std::string& bytes) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << bytes;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

// Files of `src` from a zip (optionally nested in the dataset folder) or a directory.
std::map<std::string, std::string> unpack(const Source& src, const std::string& archive_bytes) {
  ZipReader zip(archive_bytes);
  std::map<std::string, std::string> files;
  for (const char* file : {src.ratings, src.items}) {
    const std::string nested = std::string(src.folder) + "/" + file;
    if (zip.contains(nested)) {
      files[file] = zip.extract(nested);
    } else if (zip.contains(file)) {
      files[file] = zip.extract(file);
    } else {
      throw ArchiveError(std::string("archive has no ") + nested);
    }
  }
  return files;
}

std::map<std::string, std::string> copy_from_directory(const Source& src, const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const char* file : {src.ratings, src.items}) {
    fs::path path = dir / src.folder / file;
    if (!fs::is_regular_file(path)) path = dir / file;
    if (!fs::is_regular_file(path)) throw MissingInput(dir / src.folder / file);
    files[file] = read_file(path);
  }
  return files;
}

}  // namespace

int run_fetch(const FetchOptions& o) {
  const fs::path data_dir = o.data_dir.empty() ? default_data_dir() : o.data_dir;
  std::optional<Checksum> given;
  if (!o.checksum.empty()) given = parse_checksum(o.checksum);
  if (given && o.datasets.size() > 1) throw UsageError("--checksum applies to a single --dataset");

  for (const auto& name : o.datasets) {
    const Source& src = source_of(name);
    std::map<std::string, std::string> files;
    if (!o.from_archive.empty()) {
      const fs::path archive = o.from_archive;
      if (fs::is_directory(archive)) {
        if (given) throw UsageError("--checksum needs a zip archive, not a directory");
        std::cerr << name << ": copying from " << archive.string() << " (no archive checksum)\n";
        files = copy_from_directory(src, archive);
      } else {
        if (!fs::is_regular_file(archive)) throw MissingInput(archive);
        const auto bytes = read_file(archive);
        auto expected = given;
        for (const char* ext : {".sha256", ".md5"}) {
          const fs::path sidecar = archive.string() + ext;
          if (!expected && fs::is_regular_file(sidecar)) expected = checksum_in(read_file(sidecar));
        }
        if (expected) {
          verify_checksum(*expected, bytes, archive.string());
          std::cerr << name << ": " << expected->algorithm << " checksum verified\n";
        } else {
          std::cerr << name << ": no checksum given for " << archive.string() << "; not verified\n";
        }
        files = unpack(src, bytes);
      }
    } else {
      const std::string url = o.base_url + "/" + src.folder + ".zip";
      std::cerr << name << ": downloading " << url << '\n';
      const auto bytes = download(url);
      auto expected = given;
      if (!expected) {
        try {
          expected = checksum_in(download(url + ".md5"));
        } catch (const std::exception& e) {
          std::cerr << name << ": no published checksum (" << e.what() << ")\n";
        }
      }
      if (expected) {
        verify_checksum(*expected, bytes, url);
        std::cerr << name << ": " << expected->algorithm << " checksum verified\n";
      }
      files = unpack(src, bytes);
    }

    const fs::path dir = data_dir / src.folder;
    for (const auto& [file, bytes] : files) write_file(dir / file, bytes);

    std::istringstream ratings_in(files.at(src.ratings));
    const auto ratings = read_movielens_ratings(ratings_in);
    const auto data = encode_movielens(ratings, Task::Regression);
    {
      std::ofstream out(dir / "ratings.libsvm");
      write_libsvm(out, data);
      std::ofstream groups(dir / "ratings.libsvm.groups");
      write_group_map(groups, data.space());
    }
    std::cout << name << ": " << data.size() << " instances, " << data.space().group(1).end << " users, "
              << data.space().group(2).end - data.space().group(2).begin << " items -> " << dir.string()
              << '\n';
    if (data.size() != src.expected_ratings) {
      std::cerr << "warning: expected " << src.expected_ratings << " ratings for " << name << '\n';
    }
    if (name == "ml25m") {
      const auto matrix = build_movie10k(ratings, derive_seed(0, "movie10k"));
      std::ofstream out(data_dir / "movie10k.csv");
      write_preference_matrix(out, matrix);
      std::cout << "movie10k: " << matrix.num_users << " x " << matrix.num_items << " -> "
                << (data_dir / "movie10k.csv").string() << '\n';
    }
  }
  return 0;
}

}  // namespace vfm::tools
