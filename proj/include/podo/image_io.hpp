#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "podo/image.hpp"

namespace podo {

using Bytes = std::vector<std::uint8_t>;

// PNG carries dpi in its pHYs chunk. Images decoded without one get
// `fallback_dpi`.
Bytes encode_png(const RasterImage& img);
Bytes encode_png(const GrayImage& img);
RasterImage decode_png(std::span<const std::uint8_t> bytes, double fallback_dpi = kDefaultDpi);
std::optional<double> png_dpi(std::span<const std::uint8_t> bytes);

// Plain-text netpbm (P3 colour, P2 gray) used for hand-authored fixtures.
std::string encode_ppm(const RasterImage& img);
std::string encode_pgm(const GrayImage& img);
RasterImage decode_netpbm(std::string_view text, double dpi = kDefaultDpi);
GrayImage decode_pgm(std::string_view text, double dpi = kDefaultDpi);

// Sniffs the format. dpi comes from pHYs, then `<path>.dpi` sidecar, then
// the 150 dpi default.
RasterImage decode_image(std::span<const std::uint8_t> bytes, double fallback_dpi = kDefaultDpi);
RasterImage read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const RasterImage& img);

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

// Area-averaging resize, used for thumbnails.
RasterImage resize_area(const RasterImage& img, int width, int height);
RasterImage thumbnail(const RasterImage& img, int longest_side);

}  // namespace podo
