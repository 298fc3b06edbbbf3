#include "podo/imaging.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "podo/error.hpp"

namespace podo {

GrayImage to_grayscale(const RasterImage& img) {
  const auto src = img.data();
  std::vector<std::uint8_t> out(img.pixel_count());
  for (std::size_t i = 0; i < out.size(); ++i) {
    // Weights scaled by 1000 so the rounding is exact.
    const int acc = 299 * src[3 * i] + 587 * src[3 * i + 1] + 114 * src[3 * i + 2];
    out[i] = static_cast<std::uint8_t>(std::min(255, (acc + 500) / 1000));
  }
  return GrayImage(img.width(), img.height(), img.dpi(), std::move(out));
}

int otsu_threshold(const GrayImage& img) {
  std::array<std::int64_t, 256> hist{};
  for (const auto v : img.data()) ++hist[v];

  const auto total = static_cast<std::int64_t>(img.pixel_count());
  std::int64_t sum = 0;
  for (int i = 0; i < 256; ++i) sum += i * hist[i];

  std::int64_t n0 = 0;
  std::int64_t s0 = 0;
  double best = -1.0;
  int best_t = 0;
  for (int t = 0; t < 256; ++t) {
    n0 += hist[t];
    s0 += t * hist[t];
    const std::int64_t n1 = total - n0;
    if (n0 == 0 || n1 == 0) continue;
    // w0*w1*(mu0-mu1)^2 up to the constant factor 1/N^2.
    const double d = static_cast<double>(s0 * total - sum * n0);
    const double var = d * d / (static_cast<double>(n0) * static_cast<double>(n1));
    // Ties within rounding resolve to the lowest level.
    if (var > best * (1.0 + 1e-12)) {
      best = var;
      best_t = t;
    }
  }
  if (best < 0.0) {
    // Single-valued image.
    return img.data()[0];
  }
  return best_t;
}

Labeling label_components(int width, int height, const std::vector<std::uint8_t>& fg) {
  Labeling out;
  out.width = width;
  out.height = height;
  out.labels.assign(fg.size(), 0);
  std::vector<std::int32_t> stack;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const std::size_t idx = static_cast<std::size_t>(y) * width + x;
      if (!fg[idx] || out.labels[idx] != 0) continue;
      const auto label = static_cast<std::int32_t>(out.components.size() + 1);
      ComponentStats st;
      st.first_x = st.min_x = st.max_x = x;
      st.first_y = st.min_y = st.max_y = y;
      out.labels[idx] = label;
      stack.push_back(static_cast<std::int32_t>(idx));
      while (!stack.empty()) {
        const auto cur = static_cast<std::size_t>(stack.back());
        stack.pop_back();
        const int cx = static_cast<int>(cur % width);
        const int cy = static_cast<int>(cur / width);
        ++st.area;
        st.sum_x += cx;
        st.sum_y += cy;
        st.min_x = std::min(st.min_x, cx);
        st.max_x = std::max(st.max_x, cx);
        st.min_y = std::min(st.min_y, cy);
        st.max_y = std::max(st.max_y, cy);
        for (int dy = -1; dy <= 1; ++dy) {
          const int ny = cy + dy;
          if (ny < 0 || ny >= height) continue;
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = cx + dx;
            if (nx < 0 || nx >= width || (dx == 0 && dy == 0)) continue;
            const std::size_t n = static_cast<std::size_t>(ny) * width + nx;
            if (fg[n] && out.labels[n] == 0) {
              out.labels[n] = label;
              stack.push_back(static_cast<std::int32_t>(n));
            }
          }
        }
      }
      out.components.push_back(st);
    }
  }
  return out;
}

BinaryMask largest_component(const BinaryMask& mask) {
  if (mask.is_empty()) return mask;
  const std::vector<std::uint8_t> fg(mask.data().begin(), mask.data().end());
  const Labeling lab = label_components(mask.width(), mask.height(), fg);
  // Labels follow row-major first-pixel order, so the first maximum wins ties.
  std::size_t best = 0;
  for (std::size_t i = 1; i < lab.components.size(); ++i) {
    if (lab.components[i].area > lab.components[best].area) best = i;
  }
  const auto keep = static_cast<std::int32_t>(best + 1);
  std::vector<std::uint8_t> bits(fg.size());
  for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = lab.labels[i] == keep ? 1 : 0;
  return BinaryMask(mask.width(), mask.height(), std::move(bits));
}

BinaryMask fill_holes(const BinaryMask& mask) {
  const int w = mask.width();
  const int h = mask.height();
  const auto src = mask.data();
  // 1 = background reachable from the border.
  std::vector<std::uint8_t> outside(src.size(), 0);
  std::vector<std::int32_t> stack;
  auto seed = [&](int x, int y) {
    const std::size_t i = static_cast<std::size_t>(y) * w + x;
    if (!src[i] && !outside[i]) {
      outside[i] = 1;
      stack.push_back(static_cast<std::int32_t>(i));
    }
  };
  for (int x = 0; x < w; ++x) {
    seed(x, 0);
    seed(x, h - 1);
  }
  for (int y = 0; y < h; ++y) {
    seed(0, y);
    seed(w - 1, y);
  }
  while (!stack.empty()) {
    const auto cur = static_cast<std::size_t>(stack.back());
    stack.pop_back();
    const int cx = static_cast<int>(cur % w);
    const int cy = static_cast<int>(cur / w);
    if (cx > 0) seed(cx - 1, cy);
    if (cx + 1 < w) seed(cx + 1, cy);
    if (cy > 0) seed(cx, cy - 1);
    if (cy + 1 < h) seed(cx, cy + 1);
  }
  std::vector<std::uint8_t> bits(src.size());
  for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = outside[i] ? 0 : 1;
  return BinaryMask(w, h, std::move(bits));
}

BinaryMask erode(const BinaryMask& mask, int radius) {
  if (radius <= 0) return mask;
  const int w = mask.width();
  const int h = mask.height();
  const auto src = mask.data();
  // Separable: run lengths of set pixels along rows, then along columns.
  std::vector<std::uint8_t> rows(src.size(), 0), bits(src.size(), 0);
  for (int y = 0; y < h; ++y) {
    int run = 0;
    for (int x = 0; x < w + radius; ++x) {
      if (x < w) run = src[static_cast<std::size_t>(y) * w + x] ? run + 1 : 0;
      else run = 0;
      const int cx = x - radius;
      if (cx >= 0 && run >= 2 * radius + 1) rows[static_cast<std::size_t>(y) * w + cx] = 1;
    }
  }
  for (int x = 0; x < w; ++x) {
    int run = 0;
    for (int y = 0; y < h + radius; ++y) {
      if (y < h) run = rows[static_cast<std::size_t>(y) * w + x] ? run + 1 : 0;
      else run = 0;
      const int cy = y - radius;
      if (cy >= 0 && run >= 2 * radius + 1) bits[static_cast<std::size_t>(cy) * w + x] = 1;
    }
  }
  return BinaryMask(w, h, std::move(bits));
}

namespace {

std::uint8_t border_median(const GrayImage& g) {
  std::array<std::size_t, 256> hist{};
  std::size_t n = 0;
  const int w = g.width();
  const int h = g.height();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (y != 0 && y != h - 1 && x != 0 && x != w - 1) continue;
      ++hist[g.at(x, y)];
      ++n;
    }
  }
  // Lower median; border luma only steers polarity.
  const std::size_t target = (n - 1) / 2;
  std::size_t seen = 0;
  for (int v = 0; v < 256; ++v) {
    seen += hist[v];
    if (seen > target) return static_cast<std::uint8_t>(v);
  }
  return 255;
}

}  // namespace

BinaryMask segment_foot(const RasterImage& img, const SegmentationOptions& opts) {
  return segment_foot(to_grayscale(img), opts);
}

BinaryMask segment_foot(const GrayImage& gray, const SegmentationOptions& opts) {
  const int t = otsu_threshold(gray);
  const auto px = gray.data();

  double sum_lo = 0.0, sum_hi = 0.0;
  std::size_t n_lo = 0, n_hi = 0;
  for (const auto v : px) {
    if (v > t) {
      sum_hi += v;
      ++n_hi;
    } else {
      sum_lo += v;
      ++n_lo;
    }
  }
  if (n_hi == 0 || n_lo == 0) {
    fail(Errc::EmptyForeground, "no foreground found on the platen");
  }
  const double bg = border_median(gray);
  const double mean_lo = sum_lo / static_cast<double>(n_lo);
  const double mean_hi = sum_hi / static_cast<double>(n_hi);
  const bool bright_fg = std::abs(mean_hi - bg) >= std::abs(mean_lo - bg);

  std::vector<std::uint8_t> bits(px.size());
  for (std::size_t i = 0; i < px.size(); ++i) {
    bits[i] = ((px[i] > t) == bright_fg) ? 1 : 0;
  }
  BinaryMask fg = largest_component(BinaryMask(gray.width(), gray.height(), std::move(bits)));
  const double min_area = opts.min_area_fraction * static_cast<double>(gray.pixel_count());
  if (static_cast<double>(fg.count()) < min_area) {
    fail(Errc::EmptyForeground, "largest foreground component is below the minimum area");
  }
  return fill_holes(fg);
}

Pose estimate_pose(const BinaryMask& mask) {
  if (mask.is_empty()) fail(Errc::InvalidArgument, "estimate_pose requires a non-empty mask");
  using i128 = __int128;
  i128 m00 = 0, m10 = 0, m01 = 0, m20 = 0, m02 = 0, m11 = 0;
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      if (!mask.at(x, y)) continue;
      m00 += 1;
      m10 += x;
      m01 += y;
      m20 += static_cast<i128>(x) * x;
      m02 += static_cast<i128>(y) * y;
      m11 += static_cast<i128>(x) * y;
    }
  }
  // Central moments scaled by m00^2, kept exact for the degeneracy test.
  const i128 c20 = m00 * m20 - m10 * m10;
  const i128 c02 = m00 * m02 - m01 * m01;
  const i128 c11 = m00 * m11 - m10 * m01;

  Pose pose;
  const double n = static_cast<double>(m00);
  pose.area_px = n;
  pose.centroid = {static_cast<double>(m10) / n, static_cast<double>(m01) / n};
  if (c20 == c02 && c11 == 0) {
    pose.degenerate = true;
    pose.axis_angle = 0.0;
    return pose;
  }
  double angle = 0.5 * std::atan2(2.0 * static_cast<double>(c11),
                                  static_cast<double>(c20) - static_cast<double>(c02));
  constexpr double half_pi = std::numbers::pi / 2.0;
  if (angle <= -half_pi) angle += std::numbers::pi;
  if (angle > half_pi) angle -= std::numbers::pi;
  pose.axis_angle = angle;
  return pose;
}

double measure_distance(Point p1, Point p2, double dpi) {
  if (!(dpi > 0.0)) fail(Errc::InvalidArgument, "dpi must be positive");
  return std::hypot(p2.x - p1.x, p2.y - p1.y) / dpi * 25.4;
}

GrayImage downsample2(const GrayImage& img) {
  if (img.width() < 2 || img.height() < 2) {
    fail(Errc::InvalidArgument, "downsample2 needs at least a 2x2 image");
  }
  const int w = img.width() / 2;
  const int h = img.height() / 2;
  std::vector<std::uint8_t> out(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int s = img.at(2 * x, 2 * y) + img.at(2 * x + 1, 2 * y) +
                    img.at(2 * x, 2 * y + 1) + img.at(2 * x + 1, 2 * y + 1);
      out[static_cast<std::size_t>(y) * w + x] = static_cast<std::uint8_t>((s + 2) / 4);
    }
  }
  return GrayImage(w, h, img.dpi() / 2.0, std::move(out));
}

BinaryMask downsample2(const BinaryMask& mask) {
  if (mask.width() < 2 || mask.height() < 2) {
    fail(Errc::InvalidArgument, "downsample2 needs at least a 2x2 mask");
  }
  const int w = mask.width() / 2;
  const int h = mask.height() / 2;
  std::vector<std::uint8_t> out(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int s = mask.at(2 * x, 2 * y) + mask.at(2 * x + 1, 2 * y) +
                    mask.at(2 * x, 2 * y + 1) + mask.at(2 * x + 1, 2 * y + 1);
      out[static_cast<std::size_t>(y) * w + x] = s >= 2 ? 1 : 0;
    }
  }
  return BinaryMask(w, h, std::move(out));
}

}  // namespace podo
