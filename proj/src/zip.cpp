#include "podo/zip.hpp"

#include <zlib.h>

#include <limits>

#include "podo/error.hpp"

namespace podo {

namespace {

constexpr std::uint32_t kLocalSig = 0x04034b50;
constexpr std::uint32_t kCentralSig = 0x02014b50;
constexpr std::uint32_t kEndSig = 0x06054b50;
// MS-DOS date for 1980-01-01; time 00:00:00.
constexpr std::uint16_t kDosDate = 0x0021;
constexpr std::uint16_t kDosTime = 0;

void put16(Bytes& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put32(Bytes& out, std::uint32_t v) {
  put16(out, v & 0xffff);
  put16(out, v >> 16);
}

std::uint32_t crc_of(const Bytes& data) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t off = 0;
  while (off < data.size()) {
    const std::size_t n = std::min<std::size_t>(data.size() - off, 1u << 30);
    crc = crc32(crc, data.data() + off, static_cast<uInt>(n));
    off += n;
  }
  return static_cast<std::uint32_t>(crc);
}

struct Reader {
  std::span<const std::uint8_t> b;

  std::uint32_t u16(std::size_t at) const {
    if (at + 2 > b.size()) fail(Errc::DecodeError, "truncated zip archive");
    return b[at] | (b[at + 1] << 8);
  }
  std::uint32_t u32(std::size_t at) const { return u16(at) | (u16(at + 2) << 16); }
};

}  // namespace

Bytes write_zip(const std::vector<ZipEntry>& entries) {
  Bytes out;
  Bytes central;
  for (const ZipEntry& e : entries) {
    if (e.name.empty() || e.name.size() > 0xffff) fail(Errc::InvalidArgument, "bad zip entry name");
    if (e.data.size() >= std::numeric_limits<std::uint32_t>::max() ||
        out.size() >= std::numeric_limits<std::uint32_t>::max()) {
      fail(Errc::InvalidArgument, "zip64 archives are not supported");
    }
    const std::uint32_t crc = crc_of(e.data);
    const auto size = static_cast<std::uint32_t>(e.data.size());
    const auto offset = static_cast<std::uint32_t>(out.size());

    put32(out, kLocalSig);
    put16(out, 20);  // version needed
    put16(out, 0);   // flags
    put16(out, 0);   // stored
    put16(out, kDosTime);
    put16(out, kDosDate);
    put32(out, crc);
    put32(out, size);
    put32(out, size);
    put16(out, static_cast<std::uint32_t>(e.name.size()));
    put16(out, 0);
    out.insert(out.end(), e.name.begin(), e.name.end());
    out.insert(out.end(), e.data.begin(), e.data.end());

    put32(central, kCentralSig);
    put16(central, 20);  // made by
    put16(central, 20);
    put16(central, 0);
    put16(central, 0);
    put16(central, kDosTime);
    put16(central, kDosDate);
    put32(central, crc);
    put32(central, size);
    put32(central, size);
    put16(central, static_cast<std::uint32_t>(e.name.size()));
    put16(central, 0);  // extra
    put16(central, 0);  // comment
    put16(central, 0);  // disk
    put16(central, 0);  // internal attrs
    put32(central, 0);  // external attrs
    put32(central, offset);
    central.insert(central.end(), e.name.begin(), e.name.end());
  }
  const auto cd_offset = static_cast<std::uint32_t>(out.size());
  out.insert(out.end(), central.begin(), central.end());
  put32(out, kEndSig);
  put16(out, 0);
  put16(out, 0);
  put16(out, static_cast<std::uint32_t>(entries.size()));
  put16(out, static_cast<std::uint32_t>(entries.size()));
  put32(out, static_cast<std::uint32_t>(central.size()));
  put32(out, cd_offset);
  put16(out, 0);
  return out;
}

std::vector<ZipEntry> read_zip(std::span<const std::uint8_t> bytes) {
  const Reader r{bytes};
  if (bytes.size() < 22) fail(Errc::DecodeError, "not a zip archive");
  const std::size_t end = bytes.size() - 22;
  if (r.u32(end) != kEndSig) fail(Errc::DecodeError, "zip end record not found");
  const std::uint32_t count = r.u16(end + 10);
  std::size_t cd = r.u32(end + 16);
  std::vector<ZipEntry> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    if (r.u32(cd) != kCentralSig) fail(Errc::DecodeError, "bad zip central directory");
    if (r.u16(cd + 10) != 0) fail(Errc::DecodeError, "compressed zip entries are not supported");
    const std::uint32_t crc = r.u32(cd + 16);
    const std::uint32_t size = r.u32(cd + 20);
    const std::uint32_t name_len = r.u16(cd + 28);
    const std::uint32_t extra_len = r.u16(cd + 30);
    const std::uint32_t comment_len = r.u16(cd + 32);
    const std::uint32_t local = r.u32(cd + 42);
    if (cd + 46 + name_len > bytes.size()) fail(Errc::DecodeError, "truncated zip archive");
    ZipEntry e;
    e.name.assign(reinterpret_cast<const char*>(bytes.data() + cd + 46), name_len);
    if (r.u32(local) != kLocalSig) fail(Errc::DecodeError, "bad zip local header");
    const std::size_t data_at = local + 30 + r.u16(local + 26) + r.u16(local + 28);
    if (data_at + size > bytes.size()) fail(Errc::DecodeError, "truncated zip archive");
    e.data.assign(bytes.begin() + data_at, bytes.begin() + data_at + size);
    if (crc_of(e.data) != crc) fail(Errc::DecodeError, "zip entry crc mismatch: " + e.name);
    out.push_back(std::move(e));
    cd += 46 + name_len + extra_len + comment_len;
  }
  return out;
}

}  // namespace podo
