#include "support/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "podo/registration.hpp"

namespace podo::testing {

namespace {

struct Ellipse {
  double cu, cv, ru, rv;
  bool inside(double u, double v) const {
    const double a = (u - cu) / ru;
    const double b = (v - cv) / rv;
    return a * a + b * b <= 1.0;
  }
};

// Foot outline in a local frame: u along the foot (heel negative), v across.
bool inside_foot(double u, double v, double L) {
  static const Ellipse parts[] = {
      {-0.30, 0.00, 0.20, 0.15},   // heel
      {-0.05, 0.01, 0.30, 0.16},   // midfoot
      {0.18, 0.02, 0.22, 0.21},    // forefoot
      {0.40, -0.12, 0.075, 0.070}, // big toe
      {0.425, -0.01, 0.045, 0.040},
      {0.41, 0.07, 0.040, 0.035},
      {0.385, 0.13, 0.035, 0.030},
      {0.35, 0.18, 0.030, 0.028},
  };
  const double un = u / L;
  const double vn = v / L;
  for (const auto& e : parts) {
    if (e.inside(un, vn)) return true;
  }
  return false;
}

}  // namespace

RasterImage synthetic_foot(const FootParams& p) {
  std::mt19937_64 rng(p.texture_seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  struct Bump {
    double u, v, sigma, amp[3];
  };
  std::vector<Bump> bumps(60);
  for (auto& b : bumps) {
    b.u = (uni(rng) - 0.5) * p.length;
    b.v = (uni(rng) - 0.5) * 0.45 * p.length;
    b.sigma = 6.0 + 18.0 * uni(rng);
    const double a = (uni(rng) - 0.5) * 70.0;
    b.amp[0] = a;
    b.amp[1] = a * (0.7 + 0.3 * uni(rng));
    b.amp[2] = a * (0.6 + 0.4 * uni(rng));
  }

  const double c = std::cos(p.angle);
  const double s = std::sin(p.angle);
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(p.width) * p.height * 3);
  for (int y = 0; y < p.height; ++y) {
    for (int x = 0; x < p.width; ++x) {
      // 2x2 supersampled coverage for soft edges.
      int cover = 0;
      for (int sy = 0; sy < 2; ++sy) {
        for (int sx = 0; sx < 2; ++sx) {
          const double dx = x - 0.25 + 0.5 * sx - p.center.x;
          const double dy = y - 0.25 + 0.5 * sy - p.center.y;
          const double u = c * dx + s * dy;
          const double v = -s * dx + c * dy;
          cover += inside_foot(u, v, p.length) ? 1 : 0;
        }
      }
      const std::size_t o = 3 * (static_cast<std::size_t>(y) * p.width + x);
      double col[3] = {static_cast<double>(p.background[0]), static_cast<double>(p.background[1]),
                       static_cast<double>(p.background[2])};
      if (cover > 0) {
        const double dx = x - p.center.x;
        const double dy = y - p.center.y;
        const double u = c * dx + s * dy;
        const double v = -s * dx + c * dy;
        double skin[3] = {static_cast<double>(p.skin[0]), static_cast<double>(p.skin[1]),
                          static_cast<double>(p.skin[2])};
        for (const auto& b : bumps) {
          const double d2 = (u - b.u) * (u - b.u) + (v - b.v) * (v - b.v);
          if (d2 > 9.0 * b.sigma * b.sigma) continue;
          const double g = std::exp(-d2 / (2.0 * b.sigma * b.sigma));
          for (int k = 0; k < 3; ++k) skin[k] += b.amp[k] * g;
        }
        const double f = cover / 4.0;
        for (int k = 0; k < 3; ++k) col[k] = f * skin[k] + (1.0 - f) * col[k];
      }
      for (int k = 0; k < 3; ++k) {
        rgb[o + k] = static_cast<std::uint8_t>(std::clamp(std::round(col[k]), 0.0, 255.0));
      }
    }
  }
  return RasterImage(p.width, p.height, p.dpi, std::move(rgb));
}

RasterImage warp_image(const RasterImage& img, const SimilarityTransform& warp, Rgb fill) {
  const RasterImage out = resample(img, warp, img.width(), img.height(), img.dpi());
  // Pixels mapped from outside the source come back as 0; repaint them.
  const BinaryMask valid = resample(
      BinaryMask(img.width(), img.height(), std::vector<std::uint8_t>(img.pixel_count(), 1)), warp,
      img.width(), img.height());
  std::vector<std::uint8_t> rgb(out.data().begin(), out.data().end());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      if (valid.at(x, y)) continue;
      const std::size_t o = 3 * (static_cast<std::size_t>(y) * img.width() + x);
      rgb[o] = fill[0];
      rgb[o + 1] = fill[1];
      rgb[o + 2] = fill[2];
    }
  }
  return RasterImage(img.width(), img.height(), img.dpi(), std::move(rgb));
}

SimilarityTransform centered_warp(double scale, double theta, double dx, double dy, Point center) {
  return about_pivot(scale, theta, center, {center.x + dx, center.y + dy});
}

RasterImage add_gaussian_noise(const RasterImage& img, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  std::vector<std::uint8_t> rgb(img.data().begin(), img.data().end());
  for (auto& v : rgb) {
    v = static_cast<std::uint8_t>(std::clamp(std::round(v + noise(rng)), 0.0, 255.0));
  }
  return RasterImage(img.width(), img.height(), img.dpi(), std::move(rgb));
}

RasterImage solid_image(int w, int h, Rgb c, double dpi) {
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(w) * h * 3);
  for (std::size_t i = 0; i < rgb.size(); i += 3) {
    rgb[i] = c[0];
    rgb[i + 1] = c[1];
    rgb[i + 2] = c[2];
  }
  return RasterImage(w, h, dpi, std::move(rgb));
}

RasterImage draw_ellipse(const RasterImage& img, Point center, double rx, double ry, double angle,
                         Rgb c) {
  const BinaryMask m = ellipse_mask(img.width(), img.height(), center, rx, ry, angle);
  std::vector<std::uint8_t> rgb(img.data().begin(), img.data().end());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      if (!m.at(x, y)) continue;
      const std::size_t o = 3 * (static_cast<std::size_t>(y) * img.width() + x);
      rgb[o] = c[0];
      rgb[o + 1] = c[1];
      rgb[o + 2] = c[2];
    }
  }
  return RasterImage(img.width(), img.height(), img.dpi(), std::move(rgb));
}

BinaryMask ellipse_mask(int w, int h, Point center, double rx, double ry, double angle) {
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(w) * h);
  const double c = std::cos(angle), s = std::sin(angle);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double dx = x - center.x, dy = y - center.y;
      const double u = (c * dx + s * dy) / rx;
      const double v = (-s * dx + c * dy) / ry;
      bits[static_cast<std::size_t>(y) * w + x] = u * u + v * v <= 1.0 ? 1 : 0;
    }
  }
  return BinaryMask(w, h, std::move(bits));
}

BinaryMask rotated_rect_mask(int w, int h, Point center, double len, double wid, double angle) {
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(w) * h);
  const double c = std::cos(angle), s = std::sin(angle);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double dx = x - center.x, dy = y - center.y;
      const double u = c * dx + s * dy;
      const double v = -s * dx + c * dy;
      bits[static_cast<std::size_t>(y) * w + x] =
          (std::abs(u) <= len / 2.0 && std::abs(v) <= wid / 2.0) ? 1 : 0;
    }
  }
  return BinaryMask(w, h, std::move(bits));
}

}  // namespace podo::testing
