#include "podo/transform.hpp"

#include <cmath>
#include <numbers>

#include "podo/error.hpp"

namespace podo {

namespace {

Point rotate_scale(double scale, double theta, Point p) {
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  return {scale * (c * p.x - s * p.y), scale * (s * p.x + c * p.y)};
}

}  // namespace

SimilarityTransform compose(const SimilarityTransform& a, const SimilarityTransform& b) {
  const Point t = rotate_scale(a.scale, a.theta, {b.tx, b.ty});
  return {a.scale * b.scale, a.theta + b.theta, t.x + a.tx, t.y + a.ty};
}

SimilarityTransform invert(const SimilarityTransform& t) {
  if (!(t.scale > 0.0)) fail(Errc::InvalidArgument, "cannot invert a non-positive scale");
  const double inv_scale = 1.0 / t.scale;
  const Point tr = rotate_scale(inv_scale, -t.theta, {t.tx, t.ty});
  return {inv_scale, -t.theta, -tr.x, -tr.y};
}

Point apply_point(const SimilarityTransform& t, Point p) {
  const Point q = rotate_scale(t.scale, t.theta, p);
  return {q.x + t.tx, q.y + t.ty};
}

SimilarityTransform about_pivot(double scale, double theta, Point pivot, Point target) {
  const Point r = rotate_scale(scale, theta, pivot);
  return {scale, theta, target.x - r.x, target.y - r.y};
}

SimilarityTransform to_coarser_level(const SimilarityTransform& t) {
  // p_f = 2 p_c + h and q_c = (q_f - h) / 2 with h = (0.5, 0.5).
  const Point rh = rotate_scale(t.scale, t.theta, {0.5, 0.5});
  return {t.scale, t.theta, (rh.x + t.tx - 0.5) / 2.0, (rh.y + t.ty - 0.5) / 2.0};
}

SimilarityTransform to_finer_level(const SimilarityTransform& t) {
  // p_c = (p_f - h) / 2 and q_f = 2 q_c + h.
  const Point rh = rotate_scale(t.scale, t.theta, {0.5, 0.5});
  return {t.scale, t.theta, 2.0 * t.tx + 0.5 - rh.x, 2.0 * t.ty + 0.5 - rh.y};
}

double wrap_angle(double theta) {
  double r = std::remainder(theta, 2.0 * std::numbers::pi);
  if (r <= -std::numbers::pi) r += 2.0 * std::numbers::pi;
  return r;
}

std::array<Point, 4> rect_corners(const Rect& r) {
  return {Point{r.x, r.y}, Point{r.x + r.w, r.y}, Point{r.x + r.w, r.y + r.h},
          Point{r.x, r.y + r.h}};
}

}  // namespace podo
