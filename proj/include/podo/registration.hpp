#pragma once

#include <array>
#include <vector>

#include "podo/image.hpp"
#include "podo/transform.hpp"

namespace podo {

struct RegistrationConfig {
  int levels = 3;
  int max_iterations_per_level = 200;
  double relative_tolerance = 1e-5;
  int max_halvings = 20;
  double min_overlap = 0.25;
  double min_scale = 0.5;
  double max_scale = 2.0;
  // Gaussian pre-smoothing of luma at every pyramid level, in level pixels.
  double smoothing_sigma = 1.5;
  // Band along each outline left out of the comparison, in full-resolution
  // pixels (at least one pixel on coarser levels). Outline pixels mix skin
  // with platen and otherwise pull the scale.
  int edge_margin = 3;
  // Central-difference step, in pixel-equivalent displacement units.
  double fd_step = 0.5;
  // First line-search trial displacement and its cap, same units.
  double initial_step = 2.0;
  double max_step = 8.0;
};

struct RegistrationResult {
  SimilarityTransform transform;  // scan frame -> canonical frame
  double final_mse = 0.0;
  double overlap_fraction = 0.0;
  int iterations = 0;
  bool converged = false;

  friend bool operator==(const RegistrationResult&, const RegistrationResult&) = default;
};

struct MaskedImage {
  const GrayImage& image;
  const BinaryMask& mask;
};

// Moment-based initial alignment of `moving` onto `reference`, including the
// 180 degree principal-axis disambiguation by normalized cross-correlation.
SimilarityTransform coarse_align(const BinaryMask& moving_mask, const Pose& moving_pose,
                                 const BinaryMask& reference_mask, const Pose& reference_pose,
                                 const GrayImage& moving_img, const GrayImage& reference_img);

// Normalized cross-correlation of reference luma against the warped moving
// luma over the overlap of both masks. Returns -1 when there is no overlap.
double masked_ncc(MaskedImage moving, MaskedImage reference, const SimilarityTransform& t);

struct ObjectiveValue {
  double mse = 0.0;
  double overlap_fraction = 0.0;
  double overlap_px = 0.0;
};

// Masked mean-squared luma difference between the reference and the moving
// image warped by `t` (moving -> reference). The overlap weight is the
// reference mask times the bilinearly sampled moving mask.
ObjectiveValue registration_objective(MaskedImage moving, MaskedImage reference,
                                      const SimilarityTransform& t,
                                      double smoothing_sigma = RegistrationConfig{}.smoothing_sigma,
                                      int edge_margin = RegistrationConfig{}.edge_margin);

// Gradient-descent refinement on a coarse-to-fine pyramid.
RegistrationResult refine(MaskedImage moving, MaskedImage reference,
                          const SimilarityTransform& init, const RegistrationConfig& cfg = {});

// Full pipeline: segmentation, pose, coarse alignment, refinement. A
// non-converged result is returned as-is.
RegistrationResult estimate_registration(const RasterImage& scan, const RasterImage& baseline,
                                         const RegistrationConfig& cfg = {});

// As estimate_registration, but throws RegistrationRejected when the result
// did not converge.
RegistrationResult register_to_baseline(const RasterImage& scan, const RasterImage& baseline,
                                        const RegistrationConfig& cfg = {});

// Finite-difference gradient of the objective in the optimizer's normalized
// coordinates around `t`, exposed for verification.
std::array<double, 4> objective_gradient(MaskedImage moving, MaskedImage reference,
                                         const SimilarityTransform& t, double step,
                                         double smoothing_sigma = RegistrationConfig{}.smoothing_sigma,
                                         int edge_margin = RegistrationConfig{}.edge_margin);

// Inverse-mapped bilinear resampling into a `width` x `height` canonical
// frame. `t` maps source pixels to output pixels; samples outside the source
// are 0.
GrayImage resample(const GrayImage& img, const SimilarityTransform& t, int width, int height,
                   double out_dpi);
RasterImage resample(const RasterImage& img, const SimilarityTransform& t, int width, int height,
                     double out_dpi);
BinaryMask resample(const BinaryMask& mask, const SimilarityTransform& t, int width, int height);

}  // namespace podo
