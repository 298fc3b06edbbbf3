#pragma once

#include <array>

#include "podo/image.hpp"

namespace podo {

// q = scale * R(theta) * p + (tx, ty)
struct SimilarityTransform {
  double scale = 1.0;
  double theta = 0.0;
  double tx = 0.0;
  double ty = 0.0;

  static SimilarityTransform identity() { return {}; }

  friend bool operator==(const SimilarityTransform&, const SimilarityTransform&) = default;
};

// (a o b)(p) = a(b(p))
SimilarityTransform compose(const SimilarityTransform& a, const SimilarityTransform& b);
SimilarityTransform invert(const SimilarityTransform& t);
Point apply_point(const SimilarityTransform& t, Point p);

// Rotation/scale about `pivot`, then translation.
SimilarityTransform about_pivot(double scale, double theta, Point pivot, Point target);

// Expresses `t` in the coordinates of a 2x box-downsampled (or upsampled)
// grid, where fine coordinate = 2 * coarse + 0.5.
SimilarityTransform to_coarser_level(const SimilarityTransform& t);
SimilarityTransform to_finer_level(const SimilarityTransform& t);

// Wraps an angle into (-pi, pi].
double wrap_angle(double theta);

// Corners in TL, TR, BR, BL order.
std::array<Point, 4> rect_corners(const Rect& r);

}  // namespace podo
