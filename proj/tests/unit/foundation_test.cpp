#include <gtest/gtest.h>

#include <cstdio>
#include <random>

#include "podo/crypto.hpp"
#include "podo/error.hpp"
#include "podo/timeutil.hpp"
#include "podo/zip.hpp"

namespace podo {
namespace {

// Civil-from-days for the proleptic Gregorian calendar, written out
// independently of timegm/gmtime.
std::string civil_oracle(std::int64_t t) {
  std::int64_t days = t / 86400;
  std::int64_t secs = t % 86400;
  if (secs < 0) {
    secs += 86400;
    days -= 1;
  }
  days += 719468;
  const std::int64_t era = (days >= 0 ? days : days - 146096) / 146097;
  const std::int64_t doe = days - era * 146097;
  const std::int64_t yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  std::int64_t y = yoe + era * 400;
  const std::int64_t doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const std::int64_t mp = (5 * doy + 2) / 153;
  const std::int64_t d = doy - (153 * mp + 2) / 5 + 1;
  const std::int64_t m = mp < 10 ? mp + 3 : mp - 9;
  if (m <= 2) ++y;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04lld-%02lld-%02lldT%02lld:%02lld:%02lldZ",
                static_cast<long long>(y), static_cast<long long>(m), static_cast<long long>(d),
                static_cast<long long>(secs / 3600), static_cast<long long>(secs / 60 % 60),
                static_cast<long long>(secs % 60));
  return buf;
}

std::uint32_t crc32_bitwise(const Bytes& data) {
  std::uint32_t c = 0xFFFFFFFFu;
  for (std::uint8_t b : data) {
    c ^= b;
    for (int k = 0; k < 8; ++k) c = (c >> 1) ^ (0xEDB88320u & (0u - (c & 1u)));
  }
  return ~c;
}

std::uint32_t le32(const Bytes& b, std::size_t at) {
  return b[at] | (b[at + 1] << 8) | (b[at + 2] << 16) | (static_cast<std::uint32_t>(b[at + 3]) << 24);
}

Bytes bytes_of(std::string_view s) { return Bytes(s.begin(), s.end()); }

TEST(TimeUtil, KnownInstants) {
  EXPECT_EQ(format_utc(0), "1970-01-01T00:00:00Z");
  EXPECT_EQ(format_utc(951782400), "2000-02-29T00:00:00Z");
  EXPECT_EQ(format_utc_compact(1709285400), "20240301T093000Z");
  EXPECT_EQ(parse_utc("2024-03-01T09:30:00Z"), 1709285400);
}

TEST(TimeUtil, MatchesCivilOracleAndRoundTrips) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::int64_t> d(0, 4102444800);  // through 2100
  for (int i = 0; i < 2000; ++i) {
    const std::int64_t t = d(rng);
    const std::string s = format_utc(t);
    ASSERT_EQ(s, civil_oracle(t));
    ASSERT_EQ(parse_utc(s), t);
  }
}

TEST(TimeUtil, RejectsMalformed) {
  for (const char* bad : {"", "2024-03-01", "2024-03-01T09:30:00", "2024-02-30T00:00:00Z",
                          "2024-03-01T24:00:00Z", "2024-3-01T09:30:00Z", " 2024-03-01T09:30:00Z",
                          "2024-03-01T09:30:00+01:00"}) {
    EXPECT_THROW(parse_utc(bad), Error) << bad;
  }
}

TEST(Crypto, Sha256Vectors) {
  EXPECT_EQ(sha256_hex(std::string_view("")),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex(std::string_view("abc")),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Crypto, Pbkdf2Vector) {
  const Bytes salt = bytes_of("salt");
  EXPECT_EQ(to_hex(pbkdf2_sha256("password", salt, 1)),
            "120fb6cffcf8b32c43e7225256c4f837a86548c92ccc35480805987cb70be17b");
  EXPECT_EQ(to_hex(pbkdf2_sha256("password", salt, 4096)),
            "c5e478d59288c841aa530db6845c4c8d962893a001ce4e11a4963873aa98134a");
}

TEST(Crypto, HexAndBase64) {
  const Bytes b = {0x00, 0x7f, 0x80, 0xff};
  EXPECT_EQ(to_hex(b), "007f80ff");
  EXPECT_EQ(from_hex("007F80ff"), b);
  EXPECT_THROW(from_hex("abc"), Error);
  EXPECT_THROW(from_hex("zz"), Error);
  EXPECT_EQ(base64_encode(bytes_of("")), "");
  EXPECT_EQ(base64_encode(bytes_of("f")), "Zg==");
  EXPECT_EQ(base64_encode(bytes_of("fo")), "Zm8=");
  EXPECT_EQ(base64_encode(bytes_of("foobar")), "Zm9vYmFy");
}

TEST(Crypto, ConstantTimeEqual) {
  EXPECT_TRUE(constant_time_equal(bytes_of("abc"), bytes_of("abc")));
  EXPECT_FALSE(constant_time_equal(bytes_of("abc"), bytes_of("abd")));
  EXPECT_FALSE(constant_time_equal(bytes_of("abc"), bytes_of("ab")));
  EXPECT_EQ(random_bytes(32).size(), 32u);
  EXPECT_NE(random_bytes(16), random_bytes(16));
}

TEST(Zip, RoundTripAndDeterminism) {
  std::mt19937 rng(5);
  std::vector<ZipEntry> entries;
  for (int i = 0; i < 5; ++i) {
    Bytes data(static_cast<std::size_t>(rng() % 3000));
    for (auto& v : data) v = static_cast<std::uint8_t>(rng());
    entries.push_back({"dir/file" + std::to_string(i) + ".bin", data});
  }
  entries.push_back({"empty.txt", {}});
  const Bytes a = write_zip(entries);
  EXPECT_EQ(a, write_zip(entries));
  EXPECT_EQ(read_zip(a), entries);
}

TEST(Zip, HeadersMatchIndependentCrc) {
  const Bytes data = bytes_of("hello, zip");
  const Bytes z = write_zip({{"a.txt", data}});
  ASSERT_GE(z.size(), 30u);
  EXPECT_EQ(le32(z, 0), 0x04034b50u);
  EXPECT_EQ(le32(z, 14), crc32_bitwise(data));
  EXPECT_EQ(le32(z, 18), data.size());
  EXPECT_EQ(le32(z, z.size() - 22), 0x06054b50u);
}

TEST(Zip, CorruptionDetected) {
  Bytes z = write_zip({{"a.txt", bytes_of("payload payload")}});
  z[30 + 5 + 2] ^= 0x01;  // inside the stored data
  EXPECT_THROW(read_zip(z), Error);
  EXPECT_THROW(read_zip(bytes_of("not a zip")), Error);
}

}  // namespace
}  // namespace podo
