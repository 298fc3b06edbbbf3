#pragma once

#include <span>
#include <string>
#include <vector>

#include "podo/image_io.hpp"

namespace podo {

struct ZipEntry {
  std::string name;
  Bytes data;

  friend bool operator==(const ZipEntry&, const ZipEntry&) = default;
};

// Stored (uncompressed) archive, entries in the given order, every
// timestamp pinned to 1980-01-01 00:00, no extra fields. Same entries in,
// same bytes out.
Bytes write_zip(const std::vector<ZipEntry>& entries);

// Reads archives produced by write_zip (stored entries only). Throws
// DecodeError on anything else or on a CRC mismatch.
std::vector<ZipEntry> read_zip(std::span<const std::uint8_t> bytes);

}  // namespace podo
