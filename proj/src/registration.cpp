#include "podo/registration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>

#include "podo/error.hpp"
#include "podo/imaging.hpp"

namespace podo {

namespace {

constexpr double kEdgeSlack = 1e-6;

void blur_plane(std::vector<float>& src, int w, int h, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<float> kernel(2 * radius + 1);
  float ksum = 0.0f;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = static_cast<float>(std::exp(-0.5 * i * i / (sigma * sigma)));
    ksum += kernel[i + radius];
  }
  for (auto& k : kernel) k /= ksum;
  std::vector<float> tmp(src.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      float acc = 0.0f;
      for (int i = -radius; i <= radius; ++i) {
        const int xx = std::clamp(x + i, 0, w - 1);
        acc += kernel[i + radius] * src[static_cast<std::size_t>(y) * w + xx];
      }
      tmp[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      float acc = 0.0f;
      for (int i = -radius; i <= radius; ++i) {
        const int yy = std::clamp(y + i, 0, h - 1);
        acc += kernel[i + radius] * tmp[static_cast<std::size_t>(yy) * w + x];
      }
      src[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
}

// Gaussian blur restricted to the mask (normalized convolution), so the
// platen background never bleeds into skin near the outline.
std::vector<float> smoothed(const GrayImage& img, const BinaryMask& m, double sigma) {
  std::vector<float> src(img.data().begin(), img.data().end());
  if (!(sigma > 0.0)) return src;
  std::vector<float> weight(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    weight[i] = m.data()[i] ? 1.0f : 0.0f;
    src[i] *= weight[i];
  }
  blur_plane(src, img.width(), img.height(), sigma);
  blur_plane(weight, img.width(), img.height(), sigma);
  for (std::size_t i = 0; i < src.size(); ++i) {
    src[i] = weight[i] > 1e-6f ? src[i] / weight[i] : 0.0f;
  }
  return src;
}

// Mask used for the data term. Falls back to the full mask when the band
// would swallow it.
BinaryMask core_of(const BinaryMask& m, int margin) {
  if (margin <= 0) return m;
  BinaryMask core = erode(m, margin);
  return core.is_empty() ? m : core;
}

// Moving image and mask padded with a one-pixel zero border so bilinear
// taps never need bounds checks inside [-1, w] x [-1, h].
struct PaddedPlane {
  int width = 0;   // unpadded
  int height = 0;  // unpadded
  int stride = 0;
  std::vector<float> image;
  std::vector<float> mask;
  double mask_count = 0.0;

  PaddedPlane(const GrayImage& img, const BinaryMask& full, double sigma, int margin)
      : width(img.width()), height(img.height()), stride(img.width() + 2) {
    if (full.width() != img.width() || full.height() != img.height()) {
      fail(Errc::InvalidArgument, "mask and image dimensions differ");
    }
    const BinaryMask m = core_of(full, margin);
    const std::size_t n = static_cast<std::size_t>(stride) * (height + 2);
    image.assign(n, 0.0f);
    mask.assign(n, 0.0f);
    const std::vector<float> luma = smoothed(img, full, sigma);
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const std::size_t i = static_cast<std::size_t>(y + 1) * stride + (x + 1);
        mask[i] = m.at(x, y) ? 1.0f : 0.0f;
        image[i] = mask[i] * luma[static_cast<std::size_t>(y) * width + x];
      }
    }
    mask_count = static_cast<double>(m.count());
  }

  // Returns false outside the padded support.
  bool sample(double qx, double qy, double& m, double& v) const {
    const double px = qx + 1.0;
    const double py = qy + 1.0;
    if (!(px >= 0.0 && py >= 0.0 && px < width + 1 && py < height + 1)) return false;
    const int x0 = static_cast<int>(px);
    const int y0 = static_cast<int>(py);
    const double fx = px - x0;
    const double fy = py - y0;
    const std::size_t i = static_cast<std::size_t>(y0) * stride + x0;
    const double w00 = (1 - fx) * (1 - fy), w10 = fx * (1 - fy), w01 = (1 - fx) * fy,
                 w11 = fx * fy;
    m = w00 * mask[i] + w10 * mask[i + 1] + w01 * mask[i + stride] + w11 * mask[i + stride + 1];
    if (m <= 0.0) return false;
    // Image is stored premultiplied by the mask; dividing keeps only skin.
    v = (w00 * image[i] + w10 * image[i + 1] + w01 * image[i + stride] +
         w11 * image[i + stride + 1]) / m;
    return true;
  }
};

struct RefPixel {
  float x;
  float y;
  float value;
};

struct RefPlane {
  std::vector<RefPixel> pixels;
  Point centroid;
  double count = 0.0;

  RefPlane(const GrayImage& img, const BinaryMask& full, double sigma, int margin) {
    if (full.width() != img.width() || full.height() != img.height()) {
      fail(Errc::InvalidArgument, "mask and image dimensions differ");
    }
    const BinaryMask m = core_of(full, margin);
    const std::vector<float> luma = smoothed(img, full, sigma);
    pixels.reserve(m.count());
    double sx = 0.0, sy = 0.0;
    for (int y = 0; y < img.height(); ++y) {
      for (int x = 0; x < img.width(); ++x) {
        if (!m.at(x, y)) continue;
        pixels.push_back({static_cast<float>(x), static_cast<float>(y),
                          luma[static_cast<std::size_t>(y) * img.width() + x]});
        sx += x;
        sy += y;
      }
    }
    count = static_cast<double>(pixels.size());
    if (count > 0) centroid = {sx / count, sy / count};
  }
};

ObjectiveValue evaluate(const PaddedPlane& mov, const RefPlane& ref, const SimilarityTransform& t) {
  const SimilarityTransform inv = invert(t);
  const double c = inv.scale * std::cos(inv.theta);
  const double s = inv.scale * std::sin(inv.theta);
  double acc = 0.0;
  double wsum = 0.0;
  for (const RefPixel& p : ref.pixels) {
    const double qx = c * p.x - s * p.y + inv.tx;
    const double qy = s * p.x + c * p.y + inv.ty;
    double m = 0.0, v = 0.0;
    if (!mov.sample(qx, qy, m, v)) continue;
    const double d = p.value - v;
    acc += m * d * d;
    wsum += m;
  }
  ObjectiveValue out;
  out.overlap_px = wsum;
  const double denom = std::max(ref.count, mov.mask_count * t.scale * t.scale);
  out.overlap_fraction = denom > 0.0 ? std::min(1.0, wsum / denom) : 0.0;
  out.mse = wsum > 0.0 ? acc / wsum : std::numeric_limits<double>::infinity();
  return out;
}

// Normalized optimizer coordinates: scale and rotation act about the
// reference centroid and are expressed as displacement at the mask's
// characteristic radius, so every coordinate is roughly "pixels moved".
class Parametrization {
 public:
  Parametrization(const SimilarityTransform& base, const RefPlane& ref)
      : base_(base),
        target_(ref.centroid),
        pivot_(apply_point(invert(base), ref.centroid)),
        radius_(std::max(1.0, std::sqrt(ref.count / std::numbers::pi))) {}

  SimilarityTransform at(const std::array<double, 4>& u) const {
    return about_pivot(base_.scale * std::exp(u[0] / radius_), base_.theta + u[1] / radius_,
                       pivot_, {target_.x + u[2], target_.y + u[3]});
  }

 private:
  SimilarityTransform base_;
  Point target_;
  Point pivot_;
  double radius_;
};

std::array<double, 4> fd_gradient(const PaddedPlane& mov, const RefPlane& ref,
                                  const Parametrization& par, const std::array<double, 4>& u,
                                  double h) {
  std::array<double, 4> g{};
  for (int k = 0; k < 4; ++k) {
    auto up = u;
    auto dn = u;
    up[k] += h;
    dn[k] -= h;
    const double fu = evaluate(mov, ref, par.at(up)).mse;
    const double fd = evaluate(mov, ref, par.at(dn)).mse;
    g[k] = (std::isfinite(fu) && std::isfinite(fd)) ? (fu - fd) / (2.0 * h) : 0.0;
  }
  return g;
}

struct Level {
  GrayImage moving_img;
  BinaryMask moving_mask;
  GrayImage reference_img;
  BinaryMask reference_mask;
};

std::vector<Level> build_pyramid(MaskedImage moving, MaskedImage reference, int levels) {
  std::vector<Level> pyr;
  pyr.push_back({moving.image, moving.mask, reference.image, reference.mask});
  while (static_cast<int>(pyr.size()) < levels) {
    const Level& l = pyr.back();
    if (std::min({l.moving_img.width(), l.moving_img.height(), l.reference_img.width(),
                  l.reference_img.height()}) < 8) {
      break;
    }
    Level next{downsample2(l.moving_img), downsample2(l.moving_mask),
               downsample2(l.reference_img), downsample2(l.reference_mask)};
    if (next.moving_mask.is_empty() || next.reference_mask.is_empty()) break;
    pyr.push_back(std::move(next));
  }
  return pyr;
}

bool scale_ok(const SimilarityTransform& t, const RegistrationConfig& cfg) {
  return t.scale >= cfg.min_scale && t.scale <= cfg.max_scale;
}

int optimize_level(const PaddedPlane& mov, const RefPlane& ref, SimilarityTransform& t,
                   const RegistrationConfig& cfg) {
  const Parametrization par(t, ref);
  std::array<double, 4> u{};
  double f = evaluate(mov, ref, t).mse;
  if (!std::isfinite(f)) return 0;
  double step = cfg.initial_step;
  int iterations = 0;
  for (; iterations < cfg.max_iterations_per_level && f > 0.0;) {
    const auto g = fd_gradient(mov, ref, par, u, cfg.fd_step);
    const double norm = std::sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2] + g[3] * g[3]);
    if (!(norm > 0.0)) break;
    std::optional<std::array<double, 4>> accepted;
    double f_new = f;
    for (int k = 0; k <= cfg.max_halvings; ++k) {
      std::array<double, 4> trial;
      for (int i = 0; i < 4; ++i) trial[i] = u[i] - step * g[i] / norm;
      const SimilarityTransform cand = par.at(trial);
      if (scale_ok(cand, cfg)) {
        const double fc = evaluate(mov, ref, cand).mse;
        if (fc < f) {
          accepted = trial;
          f_new = fc;
          break;
        }
      }
      step *= 0.5;
    }
    if (!accepted) break;
    ++iterations;
    const double rel = (f - f_new) / f;
    u = *accepted;
    f = f_new;
    step = std::min(2.0 * step, cfg.max_step);
    if (rel < cfg.relative_tolerance) break;
  }
  t = par.at(u);
  return iterations;
}

// Bilinear tap with a small tolerance at the image edge so exact integer
// positions reached through floating-point rotation still hit.
template <typename Fetch>
bool bilinear(double qx, double qy, int w, int h, int channels, Fetch fetch, double* out) {
  if (qx < -kEdgeSlack || qy < -kEdgeSlack || qx > (w - 1) + kEdgeSlack ||
      qy > (h - 1) + kEdgeSlack) {
    return false;
  }
  qx = std::clamp(qx, 0.0, static_cast<double>(w - 1));
  qy = std::clamp(qy, 0.0, static_cast<double>(h - 1));
  const int x0 = std::min(static_cast<int>(qx), w - 1);
  const int y0 = std::min(static_cast<int>(qy), h - 1);
  const double fx = qx - x0;
  const double fy = qy - y0;
  const int x1 = std::min(x0 + 1, w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  for (int c = 0; c < channels; ++c) {
    const double top = (1 - fx) * fetch(x0, y0, c) + fx * fetch(x1, y0, c);
    const double bot = (1 - fx) * fetch(x0, y1, c) + fx * fetch(x1, y1, c);
    out[c] = (1 - fy) * top + fy * bot;
  }
  return true;
}

template <typename Fetch, typename Store>
void resample_into(const SimilarityTransform& t, int src_w, int src_h, int out_w, int out_h,
                   int channels, Fetch fetch, Store store) {
  const SimilarityTransform inv = invert(t);
  const double c = inv.scale * std::cos(inv.theta);
  const double s = inv.scale * std::sin(inv.theta);
  double v[3];
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      const double qx = c * x - s * y + inv.tx;
      const double qy = s * x + c * y + inv.ty;
      if (!bilinear(qx, qy, src_w, src_h, channels, fetch, v)) {
        v[0] = v[1] = v[2] = 0.0;
      }
      store(x, y, v);
    }
  }
}

std::uint8_t to_u8(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
}

}  // namespace

double masked_ncc(MaskedImage moving, MaskedImage reference, const SimilarityTransform& t) {
  const PaddedPlane mov(moving.image, moving.mask, 0.0, 0);
  const RefPlane ref(reference.image, reference.mask, 0.0, 0);
  const SimilarityTransform inv = invert(t);
  const double c = inv.scale * std::cos(inv.theta);
  const double s = inv.scale * std::sin(inv.theta);
  double n = 0, sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
  for (const RefPixel& p : ref.pixels) {
    const double qx = c * p.x - s * p.y + inv.tx;
    const double qy = s * p.x + c * p.y + inv.ty;
    double m = 0.0, v = 0.0;
    if (!mov.sample(qx, qy, m, v) || m < 0.5) continue;
    n += 1;
    sa += p.value;
    sb += v;
    saa += static_cast<double>(p.value) * p.value;
    sbb += v * v;
    sab += p.value * v;
  }
  if (n < 2) return -1.0;
  const double cov = sab - sa * sb / n;
  const double va = saa - sa * sa / n;
  const double vb = sbb - sb * sb / n;
  if (va <= 0.0 || vb <= 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

SimilarityTransform coarse_align(const BinaryMask& moving_mask, const Pose& moving_pose,
                                 const BinaryMask& reference_mask, const Pose& reference_pose,
                                 const GrayImage& moving_img, const GrayImage& reference_img) {
  if (moving_pose.degenerate || reference_pose.degenerate) {
    fail(Errc::DegeneratePose, "principal axis is undefined for a rotationally symmetric mask");
  }
  if (moving_mask.is_empty() || reference_mask.is_empty()) {
    fail(Errc::InvalidArgument, "coarse_align requires non-empty masks");
  }
  const double scale = std::sqrt(reference_pose.area_px / moving_pose.area_px);
  const double theta = reference_pose.axis_angle - moving_pose.axis_angle;
  const SimilarityTransform a =
      about_pivot(scale, theta, moving_pose.centroid, reference_pose.centroid);
  const SimilarityTransform b = about_pivot(scale, wrap_angle(theta + std::numbers::pi),
                                            moving_pose.centroid, reference_pose.centroid);

  // Compare the two candidates at quarter resolution when the images allow.
  GrayImage mi = moving_img, ri = reference_img;
  BinaryMask mm = moving_mask, rm = reference_mask;
  SimilarityTransform ta = a, tb = b;
  for (int k = 0; k < 2; ++k) {
    if (std::min({mi.width(), mi.height(), ri.width(), ri.height()}) < 16) break;
    BinaryMask nm = downsample2(mm), nr = downsample2(rm);
    if (nm.is_empty() || nr.is_empty()) break;
    mi = downsample2(mi);
    ri = downsample2(ri);
    mm = std::move(nm);
    rm = std::move(nr);
    ta = to_coarser_level(ta);
    tb = to_coarser_level(tb);
  }
  const double ncc_a = masked_ncc({mi, mm}, {ri, rm}, ta);
  const double ncc_b = masked_ncc({mi, mm}, {ri, rm}, tb);
  return ncc_b > ncc_a ? b : a;
}

ObjectiveValue registration_objective(MaskedImage moving, MaskedImage reference,
                                      const SimilarityTransform& t, double smoothing_sigma,
                                      int edge_margin) {
  return evaluate(PaddedPlane(moving.image, moving.mask, smoothing_sigma, edge_margin),
                  RefPlane(reference.image, reference.mask, smoothing_sigma, edge_margin), t);
}

std::array<double, 4> objective_gradient(MaskedImage moving, MaskedImage reference,
                                         const SimilarityTransform& t, double step,
                                         double smoothing_sigma, int edge_margin) {
  const PaddedPlane mov(moving.image, moving.mask, smoothing_sigma, edge_margin);
  const RefPlane ref(reference.image, reference.mask, smoothing_sigma, edge_margin);
  const Parametrization par(t, ref);
  return fd_gradient(mov, ref, par, {0, 0, 0, 0}, step);
}

RegistrationResult refine(MaskedImage moving, MaskedImage reference,
                          const SimilarityTransform& init, const RegistrationConfig& cfg) {
  if (!(init.scale > 0.0)) fail(Errc::InvalidArgument, "initial transform must have scale > 0");
  const PaddedPlane fine_mov(moving.image, moving.mask, cfg.smoothing_sigma, cfg.edge_margin);
  const RefPlane fine_ref(reference.image, reference.mask, cfg.smoothing_sigma, cfg.edge_margin);
  const ObjectiveValue start = evaluate(fine_mov, fine_ref, init);
  if (!(start.overlap_px > 0.0)) {
    fail(Errc::NoOverlap, "initial transform leaves no overlap between the masks");
  }

  const std::vector<Level> pyr = build_pyramid(moving, reference, std::max(1, cfg.levels));
  SimilarityTransform t = init;
  for (std::size_t l = 1; l < pyr.size(); ++l) t = to_coarser_level(t);

  int iterations = 0;
  for (std::size_t k = pyr.size(); k-- > 0;) {
    if (k + 1 < pyr.size()) t = to_finer_level(t);
    if (k == 0) {
      iterations += optimize_level(fine_mov, fine_ref, t, cfg);
    } else {
      // The mixed band narrows with each 2x box step.
      const int margin = cfg.edge_margin > 0 ? std::max(1, (cfg.edge_margin + (1 << k) - 1) >> k) : 0;
      const PaddedPlane mov(pyr[k].moving_img, pyr[k].moving_mask, cfg.smoothing_sigma, margin);
      const RefPlane ref(pyr[k].reference_img, pyr[k].reference_mask, cfg.smoothing_sigma, margin);
      iterations += optimize_level(mov, ref, t, cfg);
    }
  }

  ObjectiveValue fin = evaluate(fine_mov, fine_ref, t);
  if (!(fin.mse <= start.mse) || !scale_ok(t, cfg)) {
    t = init;
    fin = start;
  }
  RegistrationResult out;
  out.transform = {t.scale, wrap_angle(t.theta), t.tx, t.ty};
  out.final_mse = fin.mse;
  out.overlap_fraction = fin.overlap_fraction;
  out.iterations = iterations;
  out.converged = std::isfinite(fin.mse) && fin.overlap_fraction >= cfg.min_overlap &&
                  scale_ok(t, cfg);
  return out;
}

RegistrationResult estimate_registration(const RasterImage& scan, const RasterImage& baseline,
                                         const RegistrationConfig& cfg) {
  const GrayImage scan_gray = to_grayscale(scan);
  const GrayImage base_gray = to_grayscale(baseline);
  const BinaryMask scan_mask = segment_foot(scan_gray);
  const BinaryMask base_mask = segment_foot(base_gray);
  const Pose scan_pose = estimate_pose(scan_mask);
  const Pose base_pose = estimate_pose(base_mask);
  const SimilarityTransform init =
      coarse_align(scan_mask, scan_pose, base_mask, base_pose, scan_gray, base_gray);
  return refine({scan_gray, scan_mask}, {base_gray, base_mask}, init, cfg);
}

RegistrationResult register_to_baseline(const RasterImage& scan, const RasterImage& baseline,
                                        const RegistrationConfig& cfg) {
  RegistrationResult r = estimate_registration(scan, baseline, cfg);
  if (!r.converged) {
    fail(Errc::RegistrationRejected, "registration did not converge (overlap or scale out of range)");
  }
  return r;
}

GrayImage resample(const GrayImage& img, const SimilarityTransform& t, int width, int height,
                   double out_dpi) {
  std::vector<std::uint8_t> out(static_cast<std::size_t>(width) * height);
  resample_into(
      t, img.width(), img.height(), width, height, 1,
      [&](int x, int y, int) { return static_cast<double>(img.at(x, y)); },
      [&](int x, int y, const double* v) {
        out[static_cast<std::size_t>(y) * width + x] = to_u8(v[0]);
      });
  return GrayImage(width, height, out_dpi, std::move(out));
}

RasterImage resample(const RasterImage& img, const SimilarityTransform& t, int width, int height,
                     double out_dpi) {
  std::vector<std::uint8_t> out(static_cast<std::size_t>(width) * height * 3);
  const auto src = img.data();
  const int sw = img.width();
  resample_into(
      t, img.width(), img.height(), width, height, 3,
      [&](int x, int y, int c) {
        return static_cast<double>(src[3 * (static_cast<std::size_t>(y) * sw + x) + c]);
      },
      [&](int x, int y, const double* v) {
        const std::size_t o = 3 * (static_cast<std::size_t>(y) * width + x);
        out[o] = to_u8(v[0]);
        out[o + 1] = to_u8(v[1]);
        out[o + 2] = to_u8(v[2]);
      });
  return RasterImage(width, height, out_dpi, std::move(out));
}

BinaryMask resample(const BinaryMask& mask, const SimilarityTransform& t, int width, int height) {
  std::vector<std::uint8_t> out(static_cast<std::size_t>(width) * height);
  resample_into(
      t, mask.width(), mask.height(), width, height, 1,
      [&](int x, int y, int) { return mask.at(x, y) ? 1.0 : 0.0; },
      [&](int x, int y, const double* v) {
        out[static_cast<std::size_t>(y) * width + x] = v[0] >= 0.5 ? 1 : 0;
      });
  return BinaryMask(width, height, std::move(out));
}

}  // namespace podo
