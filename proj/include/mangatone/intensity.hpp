// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "mangatone/raster.hpp"

namespace mangatone {

/// Parameters of the relative-total-variation smoother used to estimate tone
/// intensity from a screened page.
struct SmoothingOptions {
  double smoothness = 0.015;   // weight of the TV penalty
  int iterations = 60;         // cap on reweighting passes
  double texture_scale = 3.0;  // Gaussian window (px) over which gradients are pooled
  double tolerance = 1e-4;     // stop when the mean absolute update falls below this
};

struct IntensityExtraction {
  IntensityMap intensity;
  int iterations = 0;
  bool converged = false;  // false: iteration cap hit, `intensity` is the last iterate
};

/// Intensity = 1 - T(image), T minimising |S - image|^2 + smoothness * RTV(S)
/// by iteratively reweighted least squares. The mean of T(image) equals the
/// mean of the image, so the global ink coverage is preserved.
IntensityExtraction extract_intensity(const GrayImage& image, const SmoothingOptions& options = {});

/// Crude structural-line detector for pages without an externally supplied
/// mask: black 8-connected components whose stroke width stays within
/// `max_line_width` and whose length reaches `min_length` become lines (0).
LineMask fallback_line_mask(const BitonalImage& image, int max_line_width = 3, int min_length = 24);

}  // namespace mangatone
