#pragma once

// Image-quality and motion-accuracy measures used by the evaluate command.

#include "vmtr/grid.hpp"

#include <vector>

namespace vmtr {

/// Peak = max of the reference. +inf when the images are identical.
double psnr(const Field2D& image, const Field2D& reference);

/// Mean SSIM over the valid region of an 11x11 Gaussian window (std-dev 1.5),
/// K1 = 0.01, K2 = 0.03, dynamic range = max - min of the reference.
double ssim(const Field2D& image, const Field2D& reference);

/// Per-pixel Euclidean distance between displacements, averaged over pixels.
double endpoint_error(const Deformation& a, const Deformation& b);

struct EndpointSummary {
  std::vector<double> per_frame;
  double mean = 0.0;
  double max = 0.0;
};

EndpointSummary endpoint_errors(const std::vector<Deformation>& estimated, const std::vector<Deformation>& truth);

/// mean_t |frames_t - frames_ref|.
Field2D mean_abs_difference(const std::vector<Field2D>& frames, const Field2D& reference);

}  // namespace vmtr
