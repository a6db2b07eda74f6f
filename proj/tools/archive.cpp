#include "archive.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <memory>
#include <sstream>

#include <openssl/evp.h>
#include <zlib.h>

namespace vfm::tools {

namespace {

std::uint64_t read_le(const std::string& b, std::size_t pos, int bytes) {
  if (pos + bytes > b.size()) throw ArchiveError("truncated zip archive");
  std::uint64_t v = 0;
  for (int i = bytes - 1; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[pos + i]);
  return v;
}

std::string inflate_raw(std::string_view in, std::uint64_t size) {
  std::string out(size, '\0');
  z_stream zs{};
  if (inflateInit2(&zs, -MAX_WBITS) != Z_OK) throw ArchiveError("inflateInit failed");
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(in.data()));
  zs.avail_in = static_cast<uInt>(in.size());
  zs.next_out = reinterpret_cast<Bytef*>(out.data());
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = inflate(&zs, Z_FINISH);
  const auto produced = zs.total_out;
  inflateEnd(&zs);
  if (rc != Z_STREAM_END || produced != size) throw ArchiveError("corrupt deflate stream");
  return out;
}

}  // namespace

ZipReader::ZipReader(std::string bytes) : bytes_(std::move(bytes)) {
  // End of central directory: signature 0x06054b50 within the last 64 KiB + 22 bytes.
  if (bytes_.size() < 22) throw ArchiveError("not a zip archive");
  std::size_t eocd = std::string::npos;
  const std::size_t lowest = bytes_.size() > 65557 ? bytes_.size() - 65557 : 0;
  for (std::size_t p = bytes_.size() - 22 + 1; p-- > lowest;) {
    if (read_le(bytes_, p, 4) == 0x06054b50) {
      eocd = p;
      break;
    }
  }
  if (eocd == std::string::npos) throw ArchiveError("not a zip archive");
  std::uint64_t count = read_le(bytes_, eocd + 10, 2);
  std::uint64_t offset = read_le(bytes_, eocd + 16, 4);
  if (offset == 0xffffffff || count == 0xffff) {
    // zip64: locator sits just before the classic record.
    if (eocd < 20 || read_le(bytes_, eocd - 20, 4) != 0x07064b50) throw ArchiveError("bad zip64 locator");
    const auto record = read_le(bytes_, eocd - 20 + 8, 8);
    if (read_le(bytes_, record, 4) != 0x06064b50) throw ArchiveError("bad zip64 record");
    count = read_le(bytes_, record + 32, 8);
    offset = read_le(bytes_, record + 48, 8);
  }
  std::size_t p = offset;
  for (std::uint64_t i = 0; i < count; ++i) {
    if (read_le(bytes_, p, 4) != 0x02014b50) throw ArchiveError("bad central directory entry");
    Entry e;
    e.method = static_cast<std::uint16_t>(read_le(bytes_, p + 10, 2));
    e.crc = static_cast<std::uint32_t>(read_le(bytes_, p + 16, 4));
    e.compressed = read_le(bytes_, p + 20, 4);
    e.size = read_le(bytes_, p + 24, 4);
    const auto name_len = read_le(bytes_, p + 28, 2);
    const auto extra_len = read_le(bytes_, p + 30, 2);
    const auto comment_len = read_le(bytes_, p + 32, 2);
    e.local_offset = read_le(bytes_, p + 42, 4);
    if (p + 46 + name_len > bytes_.size()) throw ArchiveError("truncated zip archive");
    std::string name = bytes_.substr(p + 46, name_len);
    // zip64 extra field carries the real sizes and offset when saturated.
    std::size_t x = p + 46 + name_len;
    const std::size_t x_end = x + extra_len;
    while (x + 4 <= x_end) {
      const auto id = read_le(bytes_, x, 2), len = read_le(bytes_, x + 2, 2);
      if (id == 1) {
        std::size_t q = x + 4;
        if (e.size == 0xffffffff) e.size = read_le(bytes_, q, 8), q += 8;
        if (e.compressed == 0xffffffff) e.compressed = read_le(bytes_, q, 8), q += 8;
        if (e.local_offset == 0xffffffff) e.local_offset = read_le(bytes_, q, 8);
      }
      x += 4 + len;
    }
    entries_[name] = e;
    p = x_end + comment_len;
  }
}

std::vector<std::string> ZipReader::names() const {
  std::vector<std::string> out;
  for (const auto& [name, e] : entries_) out.push_back(name);
  return out;
}

std::string ZipReader::extract(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ArchiveError("archive has no entry " + name);
  const Entry& e = it->second;
  const std::size_t p = e.local_offset;
  if (read_le(bytes_, p, 4) != 0x04034b50) throw ArchiveError("bad local header for " + name);
  const std::size_t data = p + 30 + read_le(bytes_, p + 26, 2) + read_le(bytes_, p + 28, 2);
  if (data + e.compressed > bytes_.size()) throw ArchiveError("truncated entry " + name);
  const std::string_view raw(bytes_.data() + data, e.compressed);
  std::string out;
  if (e.method == 0) {
    out.assign(raw);
  } else if (e.method == 8) {
    out = inflate_raw(raw, e.size);
  } else {
    throw ArchiveError("unsupported compression method for " + name);
  }
  const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(out.data()), static_cast<uInt>(out.size()));
  if (crc != e.crc) throw ArchiveError("CRC mismatch in " + name);
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArchiveError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string digest_hex(std::string_view algorithm, std::string_view data) {
  const EVP_MD* md = algorithm == "md5" ? EVP_md5() : algorithm == "sha256" ? EVP_sha256() : nullptr;
  if (!md) throw ArchiveError("unknown digest " + std::string(algorithm));
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned char out[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), md, nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), data.data(), data.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), out, &len) != 1) {
    throw ArchiveError("digest failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string s;
  for (unsigned int i = 0; i < len; ++i) {
    s += hex[out[i] >> 4];
    s += hex[out[i] & 15];
  }
  return s;
}

Checksum parse_checksum(std::string_view text) {
  Checksum c;
  const auto colon = text.find(':');
  std::string hex(colon == std::string_view::npos ? text : text.substr(colon + 1));
  std::transform(hex.begin(), hex.end(), hex.begin(), [](unsigned char ch) { return std::tolower(ch); });
  if (colon != std::string_view::npos) {
    c.algorithm = std::string(text.substr(0, colon));
    std::transform(c.algorithm.begin(), c.algorithm.end(), c.algorithm.begin(),
                   [](unsigned char ch) { return std::tolower(ch); });
  } else {
    c.algorithm = hex.size() == 32 ? "md5" : "sha256";
  }
  const std::size_t want = c.algorithm == "md5" ? 32 : c.algorithm == "sha256" ? 64 : 0;
  if (want == 0) throw std::invalid_argument("checksum algorithm must be md5 or sha256");
  if (hex.size() != want || hex.find_first_not_of("0123456789abcdef") != std::string::npos) {
    throw std::invalid_argument("malformed " + c.algorithm + " checksum");
  }
  c.hex = hex;
  return c;
}

void verify_checksum(const Checksum& expected, std::string_view data, std::string_view what) {
  const auto actual = digest_hex(expected.algorithm, data);
  if (actual != expected.hex) {
    throw ArchiveError("checksum mismatch for " + std::string(what) + ": expected " + expected.algorithm +
                       ":" + expected.hex + ", got " + actual);
  }
}

}  // namespace vfm::tools
