#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace podo {

using Digest = std::array<std::uint8_t, 32>;

Digest sha256(std::span<const std::uint8_t> data);
std::string sha256_hex(std::span<const std::uint8_t> data);
std::string sha256_hex(std::string_view data);

std::string to_hex(std::span<const std::uint8_t> data);
std::vector<std::uint8_t> from_hex(std::string_view hex);

std::string base64_encode(std::span<const std::uint8_t> data);

// Cryptographically secure random bytes.
std::vector<std::uint8_t> random_bytes(std::size_t n);

std::vector<std::uint8_t> pbkdf2_sha256(std::string_view secret,
                                        std::span<const std::uint8_t> salt, int iterations,
                                        std::size_t length = 32);

// Runs in time independent of where the inputs differ.
bool constant_time_equal(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);

}  // namespace podo
