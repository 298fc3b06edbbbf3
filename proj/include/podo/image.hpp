#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace podo {

inline constexpr double kDefaultDpi = 150.0;

struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
};

using Rgb = std::array<std::uint8_t, 3>;

// Row-major RGB8 scan with its physical resolution. Immutable once built.
class RasterImage {
 public:
  RasterImage(int width, int height, double dpi, std::vector<std::uint8_t> rgb);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  double dpi() const noexcept { return dpi_; }
  std::size_t pixel_count() const noexcept {
    return static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_);
  }
  std::span<const std::uint8_t> data() const noexcept { return rgb_; }

  Rgb at(int x, int y) const noexcept {
    const std::size_t i = 3 * (static_cast<std::size_t>(y) * width_ + x);
    return {rgb_[i], rgb_[i + 1], rgb_[i + 2]};
  }

  friend bool operator==(const RasterImage&, const RasterImage&) = default;

 private:
  int width_;
  int height_;
  double dpi_;
  std::vector<std::uint8_t> rgb_;
};

// Row-major 8-bit luma.
class GrayImage {
 public:
  GrayImage(int width, int height, double dpi, std::vector<std::uint8_t> luma);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  double dpi() const noexcept { return dpi_; }
  std::size_t pixel_count() const noexcept {
    return static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_);
  }
  std::span<const std::uint8_t> data() const noexcept { return luma_; }

  std::uint8_t at(int x, int y) const noexcept {
    return luma_[static_cast<std::size_t>(y) * width_ + x];
  }

  friend bool operator==(const GrayImage&, const GrayImage&) = default;

 private:
  int width_;
  int height_;
  double dpi_;
  std::vector<std::uint8_t> luma_;
};

// Row-major foreground flags, one byte per pixel (0 or 1).
class BinaryMask {
 public:
  BinaryMask(int width, int height, std::vector<std::uint8_t> bits);
  static BinaryMask empty(int width, int height);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t pixel_count() const noexcept {
    return static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_);
  }
  std::span<const std::uint8_t> data() const noexcept { return bits_; }

  bool at(int x, int y) const noexcept {
    return bits_[static_cast<std::size_t>(y) * width_ + x] != 0;
  }
  bool contains(int x, int y) const noexcept {
    return x >= 0 && y >= 0 && x < width_ && y < height_ && at(x, y);
  }
  std::size_t count() const noexcept { return count_; }
  bool is_empty() const noexcept { return count_ == 0; }

  friend bool operator==(const BinaryMask& a, const BinaryMask& b) {
    return a.width_ == b.width_ && a.height_ == b.height_ && a.bits_ == b.bits_;
  }

 private:
  int width_;
  int height_;
  std::vector<std::uint8_t> bits_;
  std::size_t count_ = 0;
};

// Centroid and principal-axis orientation of a mask.
struct Pose {
  Point centroid;
  double axis_angle = 0.0;  // radians in (-pi/2, pi/2], from +x
  double area_px = 0.0;
  bool degenerate = false;  // rotationally symmetric second moments
};

struct Rect {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  friend bool operator==(const Rect&, const Rect&) = default;
};

}  // namespace podo
