// SPDX-License-Identifier: Apache-2.0
//
// Parametric screentone rendering. Every family is realised by ordered
// thresholding: a spot function is evaluated per pixel, converted into
// uniform ranks over the raster, and a pixel is inked when its rank falls
// below the local target intensity. Coverage of a constant target is exact up
// to one pixel.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mangatone/raster.hpp"

namespace mangatone {

enum class ToneFamily { dot, line, grid, cross_hatch, noise };

std::string to_string(ToneFamily family);
ToneFamily parse_tone_family(const std::string& name);

struct ScreentoneSpec {
  ToneFamily family = ToneFamily::dot;
  double period_px = 8.0;
  double angle_deg = 45.0;
  double target_intensity = 0.5;
  double phase_x = 0.0;  // lattice phase, in periods
  double phase_y = 0.0;
  bool inverted = false;
  std::uint64_t seed = 0;  // noise field and tie-breaking

  void validate() const;
  friend bool operator==(const ScreentoneSpec&, const ScreentoneSpec&) = default;
};

/// Identity of the pattern irrespective of its intensity and phase; two specs
/// with equal keys are the same screentone type.
std::string type_key(const ScreentoneSpec& spec);

enum class DirectiveKind { constant, linear_ramp, radial_ramp };

std::string to_string(DirectiveKind kind);
DirectiveKind parse_directive_kind(const std::string& name);

/// Spatial intensity program. Coordinates are normalised to the render frame:
/// linear ramps run from `from` to `to` along `angle_deg` (0 = left to right);
/// radial ramps run from `from` at (center_x, center_y) to `to` at the frame's
/// farthest corner.
struct IntensityDirective {
  DirectiveKind kind = DirectiveKind::constant;
  double from = 0.5;
  double to = 0.5;
  double angle_deg = 0.0;
  double center_x = 0.5;
  double center_y = 0.5;

  static IntensityDirective constant(double value) { return {DirectiveKind::constant, value, value}; }
  static IntensityDirective linear(double from, double to, double angle_deg = 0.0) {
    return {DirectiveKind::linear_ramp, from, to, angle_deg};
  }
  static IntensityDirective radial(double center_value, double edge_value, double cx = 0.5, double cy = 0.5) {
    return {DirectiveKind::radial_ramp, center_value, edge_value, 0.0, cx, cy};
  }

  void validate() const;
  friend bool operator==(const IntensityDirective&, const IntensityDirective&) = default;
};

/// Axis-aligned window (in raster pixels) that a directive is stretched over.
struct Frame {
  int y0 = 0;
  int x0 = 0;
  int height = 0;
  int width = 0;
};

/// Directive field over an H x W raster; `frame` defaults to the whole raster.
IntensityMap directive_field(const IntensityDirective& directive, int height, int width,
                             std::optional<Frame> frame = std::nullopt);

/// Per-pixel thresholds in [0, 1): a pixel is inked iff threshold < intensity.
/// Equal spot values are ordered by a hash seeded with `tie_seed`.
std::vector<double> threshold_map(const ScreentoneSpec& spec, int height, int width, std::uint64_t tie_seed);

BitonalImage render_screentone(const ScreentoneSpec& spec, int height, int width);

BitonalImage invert_tone(const BitonalImage& image);

struct DirectedRender {
  BitonalImage image;
  IntensityMap intensity;  // the exact directive field
};

/// Ordered thresholding against a spatially varying target. `tie_seed`
/// defaults to spec.seed so a constant directive reproduces render_screentone.
DirectedRender render_with_directive(const ScreentoneSpec& spec, const IntensityDirective& directive, int height,
                                     int width, std::optional<Frame> frame = std::nullopt,
                                     std::optional<std::uint64_t> tie_seed = std::nullopt);

}  // namespace mangatone
