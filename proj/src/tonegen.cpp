// SPDX-License-Identifier: Apache-2.0
#include "mangatone/tonegen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "mangatone/imgproc.hpp"
#include "mangatone/random.hpp"

namespace mangatone {

std::string to_string(ToneFamily family) {
  switch (family) {
    case ToneFamily::dot: return "dot";
    case ToneFamily::line: return "line";
    case ToneFamily::grid: return "grid";
    case ToneFamily::cross_hatch: return "cross_hatch";
    case ToneFamily::noise: return "noise";
  }
  return "dot";
}

ToneFamily parse_tone_family(const std::string& name) {
  if (name == "dot") return ToneFamily::dot;
  if (name == "line") return ToneFamily::line;
  if (name == "grid") return ToneFamily::grid;
  if (name == "cross_hatch") return ToneFamily::cross_hatch;
  if (name == "noise") return ToneFamily::noise;
  throw ContractViolation("unknown screentone family '" + name + "'");
}

std::string to_string(DirectiveKind kind) {
  switch (kind) {
    case DirectiveKind::constant: return "constant";
    case DirectiveKind::linear_ramp: return "linear_ramp";
    case DirectiveKind::radial_ramp: return "radial_ramp";
  }
  return "constant";
}

DirectiveKind parse_directive_kind(const std::string& name) {
  if (name == "constant") return DirectiveKind::constant;
  if (name == "linear_ramp") return DirectiveKind::linear_ramp;
  if (name == "radial_ramp") return DirectiveKind::radial_ramp;
  throw ContractViolation("unknown intensity directive '" + name + "'");
}

void ScreentoneSpec::validate() const {
  require(std::isfinite(period_px) && period_px >= 2.0, "screentone period must be >= 2 px");
  require(target_intensity >= 0.0 && target_intensity <= 1.0, "target intensity must lie in [0, 1]");
  require(std::isfinite(angle_deg) && std::isfinite(phase_x) && std::isfinite(phase_y),
          "screentone angle and phase must be finite");
}

std::string type_key(const ScreentoneSpec& spec) {
  std::ostringstream os;
  os.precision(6);
  os << to_string(spec.family) << ':' << spec.period_px << ':' << std::fmod(spec.angle_deg, 180.0) << ':'
     << (spec.inverted ? "inv" : "pos");
  if (spec.family == ToneFamily::noise) os << ':' << spec.seed;
  return os.str();
}

void IntensityDirective::validate() const {
  require(from >= 0.0 && from <= 1.0 && to >= 0.0 && to <= 1.0, "directive values must lie in [0, 1]");
  require(center_x >= 0.0 && center_x <= 1.0 && center_y >= 0.0 && center_y <= 1.0,
          "directive center must lie in the unit square");
}

IntensityMap directive_field(const IntensityDirective& directive, int height, int width,
                             std::optional<Frame> frame) {
  directive.validate();
  const Frame f = frame.value_or(Frame{0, 0, height, width});
  require(f.height >= 1 && f.width >= 1, "directive frame must be non-empty");
  IntensityMap out(height, width, static_cast<float>(directive.from));
  if (directive.kind == DirectiveKind::constant) return out;

  const double a = directive.angle_deg * std::numbers::pi / 180.0;
  const double dx = std::cos(a);
  const double dy = std::sin(a);
  // Projection range of the frame corners onto the ramp direction.
  double lo = 0.0, hi = 0.0;
  for (int cy = 0; cy <= 1; ++cy)
    for (int cx = 0; cx <= 1; ++cx) {
      const double p = cx * dx + cy * dy;
      if (cy == 0 && cx == 0) lo = hi = p;
      lo = std::min(lo, p);
      hi = std::max(hi, p);
    }
  double max_r = 0.0;
  for (int cy = 0; cy <= 1; ++cy)
    for (int cx = 0; cx <= 1; ++cx)
      max_r = std::max(max_r, std::hypot(cx - directive.center_x, cy - directive.center_y));

  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double u = std::clamp((x - f.x0 + 0.5) / f.width, 0.0, 1.0);
      const double v = std::clamp((y - f.y0 + 0.5) / f.height, 0.0, 1.0);
      double t = 0.0;
      if (directive.kind == DirectiveKind::linear_ramp) {
        t = hi > lo ? (u * dx + v * dy - lo) / (hi - lo) : 0.0;
      } else {
        t = max_r > 0.0 ? std::hypot(u - directive.center_x, v - directive.center_y) / max_r : 0.0;
      }
      t = std::clamp(t, 0.0, 1.0);
      out(y, x) = static_cast<float>(directive.from + (directive.to - directive.from) * t);
    }
  }
  return out;
}

namespace {

// Signed offset of a lattice coordinate from its cell centre, in [-0.5, 0.5).
double cell_offset(double u) { return u - std::floor(u) - 0.5; }

std::vector<double> spot_values(const ScreentoneSpec& spec, int height, int width) {
  const std::size_t n = static_cast<std::size_t>(height) * width;
  std::vector<double> f(n);
  const double a = spec.angle_deg * std::numbers::pi / 180.0;
  const double p = spec.period_px;
  auto lattice = [&](double angle, double x, double y, double phase_u, double phase_v) {
    const double u = (x * std::cos(angle) + y * std::sin(angle)) / p + phase_u;
    const double v = (-x * std::sin(angle) + y * std::cos(angle)) / p + phase_v;
    return std::pair{cell_offset(u), cell_offset(v)};
  };

  if (spec.family == ToneFamily::noise) {
    std::vector<double> white(n);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        white[static_cast<std::size_t>(y) * width + x] =
            hash01(spec.seed, static_cast<std::uint64_t>(y), static_cast<std::uint64_t>(x));
    // Band-pass the white noise so grains have a size of roughly half a period.
    const auto fine = imgproc::gaussian_blur(std::span<const double>(white), height, width, p * 0.15);
    const auto coarse = imgproc::gaussian_blur(std::span<const double>(white), height, width, p * 0.5);
    for (std::size_t i = 0; i < n; ++i) f[i] = fine[i] - coarse[i];
    return f;
  }

  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double px = x + 0.5;
      const double py = y + 0.5;
      double value = 0.0;
      switch (spec.family) {
        case ToneFamily::dot: {
          auto [u, v] = lattice(a, px, py, spec.phase_x, spec.phase_y);
          value = u * u + v * v;
          break;
        }
        case ToneFamily::line: {
          auto [u, v] = lattice(a, px, py, spec.phase_x, spec.phase_y);
          (void)u;
          value = std::abs(v);
          break;
        }
        case ToneFamily::grid: {
          auto [u, v] = lattice(a, px, py, spec.phase_x, spec.phase_y);
          value = std::min(std::abs(u), std::abs(v));
          break;
        }
        case ToneFamily::cross_hatch: {
          const double spread = 30.0 * std::numbers::pi / 180.0;
          auto [u1, v1] = lattice(a + spread, px, py, spec.phase_x, spec.phase_y);
          auto [u2, v2] = lattice(a - spread, px, py, spec.phase_x, spec.phase_y);
          (void)u1;
          (void)u2;
          value = std::min(std::abs(v1), std::abs(v2));
          break;
        }
        case ToneFamily::noise: break;
      }
      f[static_cast<std::size_t>(y) * width + x] = value;
    }
  }
  return f;
}

}  // namespace

std::vector<double> threshold_map(const ScreentoneSpec& spec, int height, int width, std::uint64_t tie_seed) {
  spec.validate();
  require(height >= 1 && width >= 1, "render size must be positive");
  const auto f = spot_values(spec, height, width);
  const std::size_t n = f.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> ties(n);
  for (std::size_t i = 0; i < n; ++i) ties[i] = hash01(tie_seed, i, 0x7469);
  // Quantise spot values so numerically equal positions in different cells tie.
  auto key = [&](std::size_t i) { return std::round(f[i] * 1e9); };
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double ka = key(a), kb = key(b);
    if (ka != kb) return ka < kb;
    if (ties[a] != ties[b]) return ties[a] < ties[b];
    return a < b;
  });
  std::vector<double> t(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double rank = spec.inverted ? static_cast<double>(n - 1 - r) : static_cast<double>(r);
    t[order[r]] = (rank + 0.5) / static_cast<double>(n);
  }
  return t;
}

BitonalImage render_screentone(const ScreentoneSpec& spec, int height, int width) {
  return render_with_directive(spec, IntensityDirective::constant(spec.target_intensity), height, width).image;
}

BitonalImage invert_tone(const BitonalImage& image) {
  BitonalImage out(image.shape());
  for (std::size_t i = 0; i < image.size(); ++i) out[i] = 1.0f - image[i];
  return out;
}

DirectedRender render_with_directive(const ScreentoneSpec& spec, const IntensityDirective& directive, int height,
                                     int width, std::optional<Frame> frame, std::optional<std::uint64_t> tie_seed) {
  const auto thresholds = threshold_map(spec, height, width, tie_seed.value_or(spec.seed));
  DirectedRender out{BitonalImage(height, width, 1.0f), directive_field(directive, height, width, frame)};
  for (std::size_t i = 0; i < thresholds.size(); ++i)
    if (thresholds[i] < out.intensity[i]) out.image[i] = 0.0f;
  return out;
}

}  // namespace mangatone
