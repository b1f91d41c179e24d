// SPDX-License-Identifier: Apache-2.0
//
// Small raster-processing toolkit shared by the tone generator, the intensity
// extractor and the segmenter. Everything works on single planes stored as
// row-major spans.
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "mangatone/raster.hpp"

namespace mangatone::imgproc {

enum class Connectivity { four, eight };

struct Components {
  std::vector<std::int32_t> labels;  // -1 for pixels outside the foreground
  int count = 0;
  std::vector<std::size_t> areas;
};

/// Labels the connected components of the pixels where `foreground` is true.
Components connected_components(int height, int width,
                                const std::function<bool(std::size_t)>& foreground,
                                Connectivity connectivity = Connectivity::four);

/// Binary dilation by a disk of the given radius (radius 0 is a copy).
std::vector<std::uint8_t> dilate(std::span<const std::uint8_t> mask, int height, int width, int radius);
std::vector<std::uint8_t> erode(std::span<const std::uint8_t> mask, int height, int width, int radius);

/// Euclidean-ish (3-4 chamfer, scaled to pixel units) distance from every
/// pixel of `mask` to the nearest zero pixel; zero outside the mask. Pixels
/// beyond the raster border count as background.
std::vector<float> chamfer_distance(std::span<const std::uint8_t> mask, int height, int width);

/// Separable Gaussian blur with mirrored borders. sigma <= 0 copies.
std::vector<double> gaussian_blur(std::span<const double> plane, int height, int width, double sigma);
std::vector<float> gaussian_blur(std::span<const float> plane, int height, int width, double sigma);

/// Assigns every pixel with label < 0 the label of the nearest labeled pixel
/// (breadth-first over 4-neighbours, ties resolved by scan order).
void propagate_labels(std::vector<std::int32_t>& labels, int height, int width);

/// Mirror index into [0, n).
inline int reflect(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * n - 2;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace mangatone::imgproc
