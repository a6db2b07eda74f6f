#include <doctest.h>

#include <zlib.h>

#include "archive.hpp"

using namespace vfm::tools;

namespace {

void put(std::string& b, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) b += static_cast<char>((v >> (8 * i)) & 0xff);
}

std::string deflate_raw(const std::string& in) {
  z_stream zs{};
  REQUIRE(deflateInit2(&zs, 6, Z_DEFLATED, -MAX_WBITS, 8, Z_DEFAULT_STRATEGY) == Z_OK);
  std::string out(deflateBound(&zs, in.size()), '\0');
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(in.data()));
  zs.avail_in = static_cast<uInt>(in.size());
  zs.next_out = reinterpret_cast<Bytef*>(out.data());
  zs.avail_out = static_cast<uInt>(out.size());
  REQUIRE(deflate(&zs, Z_FINISH) == Z_STREAM_END);
  out.resize(zs.total_out);
  deflateEnd(&zs);
  return out;
}

struct File {
  std::string name;
  std::string data;
  bool deflated;
};

// Writes a zip straight from the format description: local headers, then
// the central directory and its end record.
std::string make_zip(const std::vector<File>& files) {
  std::string zip, central;
  for (const auto& f : files) {
    const auto body = f.deflated ? deflate_raw(f.data) : f.data;
    const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(f.data.data()), static_cast<uInt>(f.data.size()));
    const auto offset = zip.size();
    put(zip, 0x04034b50, 4);
    put(zip, 20, 2);
    put(zip, 0, 2);
    put(zip, f.deflated ? 8 : 0, 2);
    put(zip, 0, 4);
    put(zip, crc, 4);
    put(zip, body.size(), 4);
    put(zip, f.data.size(), 4);
    put(zip, f.name.size(), 2);
    put(zip, 0, 2);
    zip += f.name + body;

    put(central, 0x02014b50, 4);
    put(central, 20, 2);
    put(central, 20, 2);
    put(central, 0, 2);
    put(central, f.deflated ? 8 : 0, 2);
    put(central, 0, 4);
    put(central, crc, 4);
    put(central, body.size(), 4);
    put(central, f.data.size(), 4);
    put(central, f.name.size(), 2);
    put(central, 0, 2);
    put(central, 0, 2);
    put(central, 0, 2);
    put(central, 0, 2);
    put(central, 0, 4);
    put(central, offset, 4);
    central += f.name;
  }
  const auto dir_offset = zip.size();
  zip += central;
  put(zip, 0x06054b50, 4);
  put(zip, 0, 2);
  put(zip, 0, 2);
  put(zip, files.size(), 2);
  put(zip, files.size(), 2);
  put(zip, central.size(), 4);
  put(zip, dir_offset, 4);
  put(zip, 0, 2);
  return zip;
}

}  // namespace

TEST_CASE("zip entries, stored and deflated") {
  std::string big;
  for (int i = 0; i < 5000; ++i) big += std::to_string(i % 97) + "\t" + std::to_string(i) + "\n";
  auto zip = make_zip({{"ml-100k/u.data", big, true}, {"ml-100k/u.item", "1|Toy Story (1995)|x\n", false}});
  ZipReader reader(zip);
  CHECK(reader.names() == std::vector<std::string>{"ml-100k/u.data", "ml-100k/u.item"});
  CHECK(reader.extract("ml-100k/u.data") == big);
  CHECK(reader.extract("ml-100k/u.item") == "1|Toy Story (1995)|x\n");
  CHECK_THROWS_AS(reader.extract("ml-100k/u.user"), ArchiveError);
}

TEST_CASE("zip corruption is detected") {
  auto zip = make_zip({{"a.txt", "hello archive", false}});
  auto flipped = zip;
  flipped[30 + 5 + 2] ^= 0x01;  // a byte of the stored data
  CHECK_THROWS_AS(ZipReader(flipped).extract("a.txt"), ArchiveError);
  CHECK_THROWS_AS(ZipReader("not a zip at all, just some bytes"), ArchiveError);
  CHECK_THROWS_AS(ZipReader(zip.substr(0, zip.size() / 2)), ArchiveError);
}

TEST_CASE("digests of known inputs") {
  CHECK(digest_hex("md5", "abc") == "900150983cd24fb0d6963f7d28e17f72");
  CHECK(digest_hex("sha256", "abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(digest_hex("sha256", "") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK_THROWS_AS(digest_hex("sha1", "abc"), ArchiveError);
}

TEST_CASE("checksum parsing and verification") {
  auto c = parse_checksum("MD5:900150983CD24FB0D6963F7D28E17F72");
  CHECK(c.algorithm == "md5");
  CHECK(c.hex == "900150983cd24fb0d6963f7d28e17f72");
  auto bare = parse_checksum("900150983cd24fb0d6963f7d28e17f72");
  CHECK(bare.algorithm == "md5");
  CHECK_NOTHROW(verify_checksum(bare, "abc", "abc"));
  CHECK_THROWS_AS(verify_checksum(bare, "abd", "abd"), ArchiveError);
  CHECK_THROWS_AS(parse_checksum("sha256:abc"), std::invalid_argument);
  CHECK_THROWS_AS(parse_checksum("crc:00000000"), std::invalid_argument);
}
