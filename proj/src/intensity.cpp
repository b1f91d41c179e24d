// SPDX-License-Identifier: Apache-2.0
#include "mangatone/intensity.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "mangatone/imgproc.hpp"

namespace mangatone {
namespace {

constexpr double kGradientFloor = 0.02;  // epsilon_s in the RTV weights
constexpr double kWindowFloor = 1e-3;

struct Weights {
  std::vector<double> x;  // weight on S(y, x+1) - S(y, x)
  std::vector<double> y;  // weight on S(y+1, x) - S(y, x)
};

// u * w factorisation of the relative total variation penalty.
Weights rtv_weights(const std::vector<double>& s, int h, int w, double sigma) {
  const std::size_t n = s.size();
  std::vector<double> gx(n, 0.0), gy(n, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      if (x + 1 < w) gx[i] = s[i + 1] - s[i];
      if (y + 1 < h) gy[i] = s[i + w] - s[i];
    }
  auto pooled_x = imgproc::gaussian_blur(std::span<const double>(gx), h, w, sigma);
  auto pooled_y = imgproc::gaussian_blur(std::span<const double>(gy), h, w, sigma);
  for (std::size_t i = 0; i < n; ++i) {
    pooled_x[i] = 1.0 / (std::abs(pooled_x[i]) + kWindowFloor);
    pooled_y[i] = 1.0 / (std::abs(pooled_y[i]) + kWindowFloor);
  }
  auto ux = imgproc::gaussian_blur(std::span<const double>(pooled_x), h, w, sigma);
  auto uy = imgproc::gaussian_blur(std::span<const double>(pooled_y), h, w, sigma);
  Weights out{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      if (x + 1 < w) out.x[i] = ux[i] / std::max(std::abs(gx[i]), kGradientFloor);
      if (y + 1 < h) out.y[i] = uy[i] / std::max(std::abs(gy[i]), kGradientFloor);
    }
  return out;
}

// y = (I + lambda * L_w) v with L_w the weighted graph Laplacian.
void apply_system(const Weights& wt, double lambda, const std::vector<double>& v, std::vector<double>& y,
                  int h, int w) {
  for (std::size_t i = 0; i < v.size(); ++i) y[i] = v[i];
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * w + c;
      if (c + 1 < w) {
        const double f = lambda * wt.x[i] * (v[i + 1] - v[i]);
        y[i] -= f;
        y[i + 1] += f;
      }
      if (r + 1 < h) {
        const double f = lambda * wt.y[i] * (v[i + w] - v[i]);
        y[i] -= f;
        y[i + w] += f;
      }
    }
}

// Jacobi-preconditioned conjugate gradient, warm-started from `x`.
void solve(const Weights& wt, double lambda, const std::vector<double>& rhs, std::vector<double>& x, int h,
           int w) {
  const std::size_t n = rhs.size();
  std::vector<double> diag(n, 1.0);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * w + c;
      if (c + 1 < w) {
        diag[i] += lambda * wt.x[i];
        diag[i + 1] += lambda * wt.x[i];
      }
      if (r + 1 < h) {
        diag[i] += lambda * wt.y[i];
        diag[i + w] += lambda * wt.y[i];
      }
    }
  std::vector<double> ax(n), res(n), z(n), p(n), ap(n);
  apply_system(wt, lambda, x, ax, h, w);
  double rhs_norm = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    res[i] = rhs[i] - ax[i];
    z[i] = res[i] / diag[i];
    p[i] = z[i];
    rhs_norm += rhs[i] * rhs[i];
  }
  rhs_norm = std::sqrt(rhs_norm) + 1e-30;
  double rz = 0.0;
  for (std::size_t i = 0; i < n; ++i) rz += res[i] * z[i];
  for (int it = 0; it < 500; ++it) {
    double rr = 0.0;
    for (double v : res) rr += v * v;
    if (std::sqrt(rr) / rhs_norm < 1e-8) break;
    apply_system(wt, lambda, p, ap, h, w);
    double pap = 0.0;
    for (std::size_t i = 0; i < n; ++i) pap += p[i] * ap[i];
    if (pap <= 0.0) break;
    const double alpha = rz / pap;
    for (std::size_t i = 0; i < n; ++i) {
      x[i] += alpha * p[i];
      res[i] -= alpha * ap[i];
      z[i] = res[i] / diag[i];
    }
    double rz_next = 0.0;
    for (std::size_t i = 0; i < n; ++i) rz_next += res[i] * z[i];
    const double beta = rz_next / rz;
    rz = rz_next;
    for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
  }
}

}  // namespace

IntensityExtraction extract_intensity(const GrayImage& image, const SmoothingOptions& options) {
  require(options.smoothness > 0.0, "extract_intensity: smoothness must be positive");
  require(options.iterations > 0, "extract_intensity: iterations must be positive");
  require(in_unit_interval(image.values()), "extract_intensity: pixels must lie in [0, 1]");
  const int h = image.height();
  const int w = image.width();
  const std::vector<double> input(image.values().begin(), image.values().end());
  std::vector<double> s = input;
  IntensityExtraction out;
  for (int it = 0; it < options.iterations; ++it) {
    const Weights wt = rtv_weights(s, h, w, options.texture_scale);
    std::vector<double> next = s;
    solve(wt, options.smoothness, input, next, h, w);
    double change = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) change += std::abs(next[i] - s[i]);
    change /= static_cast<double>(s.size());
    s.swap(next);
    out.iterations = it + 1;
    if (change < options.tolerance) {
      out.converged = true;
      break;
    }
  }
  out.intensity = IntensityMap(h, w);
  for (std::size_t i = 0; i < s.size(); ++i)
    out.intensity[i] = static_cast<float>(std::clamp(1.0 - s[i], 0.0, 1.0));
  return out;
}

LineMask fallback_line_mask(const BitonalImage& image, int max_line_width, int min_length) {
  require(max_line_width >= 1, "fallback_line_mask: max_line_width must be positive");
  const int h = image.height();
  const int w = image.width();
  std::vector<std::uint8_t> ink(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) ink[i] = image[i] < 0.5f ? 1 : 0;
  const auto comps = imgproc::connected_components(
      h, w, [&](std::size_t i) { return ink[i] != 0; }, imgproc::Connectivity::eight);
  const auto depth = imgproc::chamfer_distance(ink, h, w);

  struct Extent {
    int y0 = 1 << 30, x0 = 1 << 30, y1 = -1, x1 = -1;
    float depth = 0.0f;
  };
  std::vector<Extent> ext(static_cast<std::size_t>(comps.count));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const int l = comps.labels[i];
      if (l < 0) continue;
      auto& e = ext[static_cast<std::size_t>(l)];
      e.y0 = std::min(e.y0, y);
      e.y1 = std::max(e.y1, y);
      e.x0 = std::min(e.x0, x);
      e.x1 = std::max(e.x1, x);
      e.depth = std::max(e.depth, depth[i]);
    }
  std::vector<bool> is_line(ext.size());
  for (std::size_t l = 0; l < ext.size(); ++l) {
    const auto& e = ext[l];
    // A stroke of width k has inscribed depth about (k + 1) / 2.
    const double width = 2.0 * e.depth - 1.0;
    const int length = std::max(e.y1 - e.y0 + 1, e.x1 - e.x0 + 1);
    is_line[l] = width <= max_line_width + 1e-6 && length >= min_length;
  }
  LineMask mask(h, w, 1);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const int l = comps.labels[i];
    if (l >= 0 && is_line[static_cast<std::size_t>(l)]) mask[i] = 0;
  }
  return mask;
}

}  // namespace mangatone
