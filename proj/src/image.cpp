#include "podo/image.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "podo/error.hpp"

namespace podo {

namespace {

void check_dims(int width, int height, std::size_t have, std::size_t channels) {
  if (width < 1 || height < 1) {
    fail(Errc::InvalidArgument, "image dimensions must be positive");
  }
  const std::size_t want =
      static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * channels;
  if (have != want) {
    fail(Errc::InvalidArgument, "pixel buffer length " + std::to_string(have) +
                                    " does not match " + std::to_string(want));
  }
}

void check_dpi(double dpi) {
  if (!(dpi > 0.0) || !std::isfinite(dpi)) {
    fail(Errc::InvalidArgument, "dpi must be positive");
  }
}

}  // namespace

RasterImage::RasterImage(int width, int height, double dpi, std::vector<std::uint8_t> rgb)
    : width_(width), height_(height), dpi_(dpi), rgb_(std::move(rgb)) {
  check_dims(width_, height_, rgb_.size(), 3);
  check_dpi(dpi_);
}

GrayImage::GrayImage(int width, int height, double dpi, std::vector<std::uint8_t> luma)
    : width_(width), height_(height), dpi_(dpi), luma_(std::move(luma)) {
  check_dims(width_, height_, luma_.size(), 1);
  check_dpi(dpi_);
}

BinaryMask::BinaryMask(int width, int height, std::vector<std::uint8_t> bits)
    : width_(width), height_(height), bits_(std::move(bits)) {
  check_dims(width_, height_, bits_.size(), 1);
  for (auto& b : bits_) {
    b = b != 0 ? 1 : 0;
    count_ += b;
  }
}

BinaryMask BinaryMask::empty(int width, int height) {
  return BinaryMask(width, height,
                    std::vector<std::uint8_t>(static_cast<std::size_t>(width) * height, 0));
}

}  // namespace podo
