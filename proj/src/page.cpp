// SPDX-License-Identifier: Apache-2.0
#include "mangatone/page.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_map>

#include "mangatone/imgproc.hpp"

namespace mangatone {

LabelMap SyntheticPage::type_labels() const {
  std::unordered_map<std::string, int> ids;
  std::vector<int> remap(specs.size());
  for (std::size_t l = 0; l < specs.size(); ++l) {
    const std::string key = specs[l] ? type_key(*specs[l]) : std::string("blank");
    auto [it, inserted] = ids.emplace(key, static_cast<int>(ids.size()));
    remap[l] = it->second;
  }
  LabelMap::Grid grid(labels.height(), labels.width());
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = remap[static_cast<std::size_t>(labels.grid()[i])];
  return LabelMap(std::move(grid), std::max<int>(1, static_cast<int>(ids.size())));
}

void stroke_polygon(BitonalImage& canvas, const std::vector<std::pair<double, double>>& points, int stroke) {
  const double half = stroke / 2.0;
  auto stamp = [&](double px, double py) {
    if (stroke <= 1) {
      const int x = static_cast<int>(std::floor(px));
      const int y = static_cast<int>(std::floor(py));
      if (canvas.in_bounds(y, x)) canvas(y, x) = 0.0f;
      return;
    }
    const int r = static_cast<int>(std::ceil(half)) + 1;
    const int cx = static_cast<int>(std::floor(px));
    const int cy = static_cast<int>(std::floor(py));
    for (int y = cy - r; y <= cy + r; ++y)
      for (int x = cx - r; x <= cx + r; ++x)
        if (canvas.in_bounds(y, x) && std::hypot(x + 0.5 - px, y + 0.5 - py) <= half) canvas(y, x) = 0.0f;
  };
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto [x0, y0] = points[i];
    const auto [x1, y1] = points[(i + 1) % points.size()];
    const double len = std::hypot(x1 - x0, y1 - y0);
    const int steps = std::max(1, static_cast<int>(std::ceil(len * 3.0)));
    for (int s = 0; s <= steps; ++s) {
      const double t = static_cast<double>(s) / steps;
      stamp(x0 + (x1 - x0) * t, y0 + (y1 - y0) * t);
    }
  }
}

namespace {

std::vector<std::pair<double, double>> ellipse_points(double cx, double cy, double rx, double ry, double rot) {
  std::vector<std::pair<double, double>> pts;
  const int n = 96;
  for (int i = 0; i < n; ++i) {
    const double t = 2.0 * std::numbers::pi * i / n;
    const double ex = rx * std::cos(t);
    const double ey = ry * std::sin(t);
    pts.emplace_back(cx + ex * std::cos(rot) - ey * std::sin(rot), cy + ex * std::sin(rot) + ey * std::cos(rot));
  }
  return pts;
}

std::vector<std::pair<double, double>> polygon_points(double cx, double cy, double radius, Rng& rng) {
  const int n = 3 + static_cast<int>(uniform_index(rng, 5));
  const double offset = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  std::vector<std::pair<double, double>> pts;
  for (int i = 0; i < n; ++i) {
    const double t = offset + 2.0 * std::numbers::pi * i / n;
    const double r = radius * uniform(rng, 0.7, 1.0);
    pts.emplace_back(cx + r * std::cos(t), cy + r * std::sin(t));
  }
  return pts;
}

// Closed Catmull-Rom curve through jittered radial control points.
std::vector<std::pair<double, double>> blob_points(double cx, double cy, double radius, Rng& rng) {
  const int n = 5 + static_cast<int>(uniform_index(rng, 4));
  std::vector<std::pair<double, double>> ctrl;
  for (int i = 0; i < n; ++i) {
    const double t = 2.0 * std::numbers::pi * i / n;
    const double r = radius * uniform(rng, 0.6, 1.0);
    ctrl.emplace_back(cx + r * std::cos(t), cy + r * std::sin(t));
  }
  std::vector<std::pair<double, double>> pts;
  const int sub = 16;
  for (int i = 0; i < n; ++i) {
    const auto& p0 = ctrl[(i + n - 1) % n];
    const auto& p1 = ctrl[i];
    const auto& p2 = ctrl[(i + 1) % n];
    const auto& p3 = ctrl[(i + 2) % n];
    for (int s = 0; s < sub; ++s) {
      const double t = static_cast<double>(s) / sub;
      const double t2 = t * t, t3 = t2 * t;
      auto cr = [&](double a, double b, double c, double d) {
        return 0.5 * (2 * b + (-a + c) * t + (2 * a - 5 * b + 4 * c - d) * t2 + (-a + 3 * b - 3 * c + d) * t3);
      };
      pts.emplace_back(cr(p0.first, p1.first, p2.first, p3.first), cr(p0.second, p1.second, p2.second, p3.second));
    }
  }
  return pts;
}

}  // namespace

BitonalImage generate_line_art(int height, int width, Rng& rng, const LineArtOptions& options) {
  require(height >= 8 && width >= 8, "line art needs at least 8 x 8 pixels");
  require(options.min_shapes >= 0 && options.max_shapes >= options.min_shapes, "invalid shape count range");
  require(options.min_stroke >= 1 && options.max_stroke >= options.min_stroke, "invalid stroke range");
  BitonalImage canvas(height, width, 1.0f);
  const int count =
      options.min_shapes + static_cast<int>(uniform_index(rng, options.max_shapes - options.min_shapes + 1));
  const double extent = std::min(height, width);
  for (int s = 0; s < count; ++s) {
    const int stroke =
        options.min_stroke + static_cast<int>(uniform_index(rng, options.max_stroke - options.min_stroke + 1));
    const double radius = uniform(rng, 0.12, 0.3) * extent;
    const double cx = uniform(rng, radius + 2, width - radius - 2);
    const double cy = uniform(rng, radius + 2, height - radius - 2);
    std::vector<std::pair<double, double>> pts;
    switch (uniform_index(rng, 3)) {
      case 0:
        pts = ellipse_points(cx, cy, radius, radius * uniform(rng, 0.5, 1.0), uniform(rng, 0.0, std::numbers::pi));
        break;
      case 1: pts = polygon_points(cx, cy, radius, rng); break;
      default: pts = blob_points(cx, cy, radius, rng); break;
    }
    stroke_polygon(canvas, pts, stroke);
  }
  if (options.panel_border) {
    stroke_polygon(canvas, {{1, 1}, {width - 2.0, 1}, {width - 2.0, height - 2.0}, {1, height - 2.0}}, 2);
  }
  return canvas;
}

RegionExtraction extract_regions(const BitonalImage& line_art, int gap_px, int min_area) {
  const int h = line_art.height();
  const int w = line_art.width();
  std::vector<std::uint8_t> ink(line_art.size());
  for (std::size_t i = 0; i < ink.size(); ++i) ink[i] = line_art[i] < 0.5f ? 1 : 0;
  // Dilating by half the gap bridges openings of up to gap_px pixels.
  const auto closed = imgproc::dilate(ink, h, w, (gap_px + 1) / 2);
  auto comps = imgproc::connected_components(h, w, [&](std::size_t i) { return closed[i] == 0; });
  if (comps.count == 0) {
    // No white left after gap closing: fall back to the raw white area, else one label.
    comps = imgproc::connected_components(h, w, [&](std::size_t i) { return ink[i] == 0; });
    if (comps.count == 0) return {LabelMap(h, w, 1), true};
  }
  // Drop specks, then renumber the survivors densely in scan order.
  std::vector<std::int32_t> remap(static_cast<std::size_t>(comps.count), -1);
  int next = 0;
  for (int c = 0; c < comps.count; ++c)
    if (comps.areas[static_cast<std::size_t>(c)] >= static_cast<std::size_t>(min_area)) remap[c] = next++;
  if (next == 0) {
    // Everything is a speck: keep the largest.
    const auto largest = std::max_element(comps.areas.begin(), comps.areas.end()) - comps.areas.begin();
    remap[static_cast<std::size_t>(largest)] = next++;
  }
  std::vector<std::int32_t> labels(comps.labels.size(), -1);
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (comps.labels[i] >= 0) labels[i] = remap[static_cast<std::size_t>(comps.labels[i])];
  imgproc::propagate_labels(labels, h, w);
  LabelMap::Grid grid(Shape{1, h, w}, std::move(labels));
  return {LabelMap(std::move(grid), next), false};
}

std::uint64_t region_tie_seed(std::uint64_t page_seed, int label) {
  return derive_seed(page_seed, static_cast<std::uint64_t>(label) + 1);
}

Frame region_frame(const LabelMap& labels, int label) {
  int y0 = labels.height(), x0 = labels.width(), y1 = -1, x1 = -1;
  for (int y = 0; y < labels.height(); ++y)
    for (int x = 0; x < labels.width(); ++x)
      if (labels(y, x) == label) {
        y0 = std::min(y0, y);
        y1 = std::max(y1, y);
        x0 = std::min(x0, x);
        x1 = std::max(x1, x);
      }
  if (y1 < 0) return Frame{0, 0, labels.height(), labels.width()};
  return Frame{y0, x0, y1 - y0 + 1, x1 - x0 + 1};
}

SyntheticPage compose_page(const BitonalImage& line_art, const std::map<int, ToneAssignment>& assignment,
                           std::uint64_t rng_seed) {
  require(is_bitonal(line_art.values()), "compose_page: line art must be bitonal");
  const int h = line_art.height();
  const int w = line_art.width();
  auto regions = extract_regions(line_art);
  SyntheticPage page;
  page.labels = std::move(regions.labels);
  page.image = BitonalImage(h, w, 1.0f);
  page.intensity = IntensityMap(h, w, 0.0f);
  page.line_mask = LineMask(h, w, 1);
  const int n = page.labels.num_labels();
  page.specs.assign(static_cast<std::size_t>(n), std::nullopt);
  page.directives.assign(static_cast<std::size_t>(n), IntensityDirective::constant(0.0));

  for (int label = 0; label < n; ++label) {
    auto it = assignment.find(label);
    if (it == assignment.end()) continue;
    const auto& [spec, directive] = it->second;
    page.specs[static_cast<std::size_t>(label)] = spec;
    page.directives[static_cast<std::size_t>(label)] = directive;
    const auto rendered = render_with_directive(spec, directive, h, w, region_frame(page.labels, label),
                                                region_tie_seed(rng_seed, label));
    const auto& grid = page.labels.grid();
    for (std::size_t i = 0; i < grid.size(); ++i) {
      if (grid[i] != label) continue;
      page.image[i] = rendered.image[i];
      page.intensity[i] = rendered.intensity[i];
    }
  }
  for (std::size_t i = 0; i < line_art.size(); ++i) {
    if (line_art[i] < 0.5f) {
      page.image[i] = 0.0f;
      page.intensity[i] = 1.0f;
      page.line_mask[i] = 0;
    }
  }
  return page;
}

}  // namespace mangatone
