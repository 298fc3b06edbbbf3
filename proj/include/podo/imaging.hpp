#pragma once

#include <cstdint>
#include <vector>

#include "podo/image.hpp"

namespace podo {

// Rec.601 luma, rounded half away from zero.
GrayImage to_grayscale(const RasterImage& img);

// Otsu level: foreground is luma > threshold. A single-valued image returns
// that value (so the foreground is empty).
int otsu_threshold(const GrayImage& img);

// 8-connected component labeling. Labels are assigned in row-major order of
// each component's first pixel, starting at 1; 0 is background.
struct ComponentStats {
  std::size_t area = 0;
  int first_x = 0;
  int first_y = 0;
  double sum_x = 0.0;
  double sum_y = 0.0;
  int min_x = 0, min_y = 0, max_x = 0, max_y = 0;
};

struct Labeling {
  int width = 0;
  int height = 0;
  std::vector<std::int32_t> labels;
  std::vector<ComponentStats> components;  // index = label - 1
};

Labeling label_components(int width, int height, const std::vector<std::uint8_t>& fg);

BinaryMask largest_component(const BinaryMask& mask);

// Marks every background region that is not 4-connected to the border.
BinaryMask fill_holes(const BinaryMask& mask);

// Keeps pixels whose whole (2r+1) x (2r+1) window is set; outside the image
// counts as unset.
BinaryMask erode(const BinaryMask& mask, int radius);

struct SegmentationOptions {
  double min_area_fraction = 0.005;
};

// Otsu split, polarity chosen against the border median, largest component,
// hole fill. Throws EmptyForeground when nothing appendage-sized remains.
BinaryMask segment_foot(const RasterImage& img, const SegmentationOptions& opts = {});
BinaryMask segment_foot(const GrayImage& gray, const SegmentationOptions& opts = {});

// Requires a non-empty mask.
Pose estimate_pose(const BinaryMask& mask);

double measure_distance(Point p1, Point p2, double dpi);

// 2x2 box filter with floor dimensions and half the dpi.
GrayImage downsample2(const GrayImage& img);
BinaryMask downsample2(const BinaryMask& mask);

}  // namespace podo
