// SPDX-License-Identifier: Apache-2.0
//
// Intensity-aware hypersphere mapping: type features are scaled by
// r = sin(pi * intensity), collapsing type diversity to a point at pure white
// and pure black tones.
#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mangatone/raster.hpp"

namespace mangatone {

inline constexpr double kIahmEpsilon = 1e-4;

/// Hypersphere radius for one intensity value.
inline double iahm_radius(double intensity) { return std::sin(std::numbers::pi * intensity); }

/// S'_scr[c, y, x] = sin(pi * S_itn[y, x]) * S_scr[c, y, x].
inline TypeFeatureMap iahm_forward(const IntensityMap& intensity, const TypeFeatureMap& type_feature) {
  require(intensity.shape().same_plane(type_feature.shape()),
          "iahm_forward: intensity " + to_string(intensity.shape()) + " vs type feature " +
              to_string(type_feature.shape()));
  TypeFeatureMap out(type_feature.shape());
  const std::size_t plane = intensity.size();
  for (int c = 0; c < type_feature.channels(); ++c) {
    auto src = type_feature.plane(c);
    auto dst = out.plane(c);
    for (std::size_t i = 0; i < plane; ++i) {
      // sin(pi) is not exactly zero in floating point; the extremes are pinned.
      const double t = intensity[i];
      const double r = (t <= 0.0 || t >= 1.0) ? 0.0 : iahm_radius(t);
      dst[i] = static_cast<float>(r * src[i]);
    }
  }
  return out;
}

/// Inverse mapping with the radius clamped from below by epsilon; exact
/// inverse of iahm_forward wherever sin(pi * intensity) >= epsilon.
inline TypeFeatureMap iahm_inverse(const IntensityMap& intensity, const TypeFeatureMap& scaled_type,
                                   double epsilon = kIahmEpsilon) {
  require(epsilon > 0.0, "iahm_inverse: epsilon must be positive");
  require(intensity.shape().same_plane(scaled_type.shape()),
          "iahm_inverse: intensity " + to_string(intensity.shape()) + " vs type feature " +
              to_string(scaled_type.shape()));
  TypeFeatureMap out(scaled_type.shape());
  const std::size_t plane = intensity.size();
  for (int c = 0; c < scaled_type.channels(); ++c) {
    auto src = scaled_type.plane(c);
    auto dst = out.plane(c);
    for (std::size_t i = 0; i < plane; ++i) {
      const double t = intensity[i];
      const double r = (t <= 0.0 || t >= 1.0) ? 0.0 : iahm_radius(t);
      dst[i] = static_cast<float>(src[i] / std::max(r, epsilon));
    }
  }
  return out;
}

}  // namespace mangatone
