// SPDX-License-Identifier: Apache-2.0
//
// Synthetic manga pages: procedural line art, closed-region extraction and
// per-region screentone filling with aligned ground truth.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "mangatone/random.hpp"
#include "mangatone/raster.hpp"
#include "mangatone/tonegen.hpp"

namespace mangatone {

struct ToneAssignment {
  ScreentoneSpec spec;
  IntensityDirective directive;
};

struct SyntheticPage {
  BitonalImage image;
  IntensityMap intensity;  // ground truth; 1 on structural lines
  LabelMap labels;         // one label per closed region
  LineMask line_mask;
  std::vector<std::optional<ScreentoneSpec>> specs;  // per label; nullopt = blank region
  std::vector<IntensityDirective> directives;        // per label

  /// Ground-truth screentone type per pixel: regions sharing a type_key share a
  /// label. Blank regions form their own type.
  LabelMap type_labels() const;
};

struct LineArtOptions {
  int min_shapes = 2;
  int max_shapes = 5;
  int min_stroke = 1;
  int max_stroke = 3;
  bool panel_border = false;
};

/// Closed ellipses, polygons and Bezier blobs stroked in black on white.
BitonalImage generate_line_art(int height, int width, Rng& rng, const LineArtOptions& options = {});

/// Draws a closed polyline with a round brush of the given stroke width.
void stroke_polygon(BitonalImage& canvas, const std::vector<std::pair<double, double>>& points, int stroke);

struct RegionExtraction {
  LabelMap labels;
  bool fully_inked = false;  // page had no white area; a single label was produced
};

/// Connected white regions after bridging line gaps of up to `gap_px`; line
/// pixels and regions smaller than `min_area` join the nearest region.
RegionExtraction extract_regions(const BitonalImage& line_art, int gap_px = 2, int min_area = 16);

/// Tie seed used for the rendering of one region of a composed page.
std::uint64_t region_tie_seed(std::uint64_t page_seed, int label);

/// Fills every region of `line_art` with its assigned tone. Regions without an
/// assignment stay white and are recorded as blank.
SyntheticPage compose_page(const BitonalImage& line_art, const std::map<int, ToneAssignment>& assignment,
                           std::uint64_t rng_seed);

/// Region bounding box used as the directive frame.
Frame region_frame(const LabelMap& labels, int label);

}  // namespace mangatone
