#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace vfm::tools {

class ArchiveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reads a zip archive held in memory. Entries may be stored or deflated.
class ZipReader {
 public:
  explicit ZipReader(std::string bytes);

  std::vector<std::string> names() const;
  bool contains(const std::string& name) const { return entries_.count(name) > 0; }
  /// Decompressed contents, CRC-checked.
  std::string extract(const std::string& name) const;

 private:
  struct Entry {
    std::uint16_t method = 0;
    std::uint32_t crc = 0;
    std::uint64_t compressed = 0;
    std::uint64_t size = 0;
    std::uint64_t local_offset = 0;
  };
  std::string bytes_;
  std::map<std::string, Entry> entries_;
};

std::string read_file(const std::filesystem::path& path);

/// Lowercase hex digest; `algorithm` is "md5" or "sha256".
std::string digest_hex(std::string_view algorithm, std::string_view data);

/// "sha256:<hex>" or "md5:<hex>"; a bare hex string is taken by its length.
struct Checksum {
  std::string algorithm;
  std::string hex;
};
Checksum parse_checksum(std::string_view text);

/// Throws ArchiveError when `data` does not match.
void verify_checksum(const Checksum& expected, std::string_view data, std::string_view what);

}  // namespace vfm::tools
