// SPDX-License-Identifier: Apache-2.0
#include "mangatone/imgproc.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

namespace mangatone::imgproc {

Components connected_components(int height, int width,
                                const std::function<bool(std::size_t)>& foreground,
                                Connectivity connectivity) {
  const std::size_t n = static_cast<std::size_t>(height) * width;
  Components out;
  out.labels.assign(n, -1);
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < n; ++start) {
    if (out.labels[start] >= 0 || !foreground(start)) continue;
    const int label = out.count++;
    std::size_t area = 0;
    out.labels[start] = label;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      ++area;
      const int y = static_cast<int>(p / width);
      const int x = static_cast<int>(p % width);
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (dy == 0 && dx == 0) continue;
          if (connectivity == Connectivity::four && dy != 0 && dx != 0) continue;
          const int ny = y + dy;
          const int nx = x + dx;
          if (ny < 0 || nx < 0 || ny >= height || nx >= width) continue;
          const std::size_t q = static_cast<std::size_t>(ny) * width + nx;
          if (out.labels[q] >= 0 || !foreground(q)) continue;
          out.labels[q] = label;
          stack.push_back(q);
        }
      }
    }
    out.areas.push_back(area);
  }
  return out;
}

namespace {

std::vector<std::pair<int, int>> disk_offsets(int radius) {
  std::vector<std::pair<int, int>> offsets;
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx)
      if (dy * dy + dx * dx <= radius * radius + radius) offsets.emplace_back(dy, dx);
  return offsets;
}

std::vector<std::uint8_t> morph(std::span<const std::uint8_t> mask, int height, int width, int radius,
                                bool dilation) {
  std::vector<std::uint8_t> out(mask.begin(), mask.end());
  if (radius <= 0) return out;
  const auto offsets = disk_offsets(radius);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      bool hit = !dilation;
      for (auto [dy, dx] : offsets) {
        const int ny = y + dy;
        const int nx = x + dx;
        // Outside the raster counts as foreground for erosion so borders do not eat shapes.
        const bool v = (ny < 0 || nx < 0 || ny >= height || nx >= width)
                           ? !dilation
                           : mask[static_cast<std::size_t>(ny) * width + nx] != 0;
        if (dilation && v) {
          hit = true;
          break;
        }
        if (!dilation && !v) {
          hit = false;
          break;
        }
      }
      out[static_cast<std::size_t>(y) * width + x] = hit ? 1 : 0;
    }
  }
  return out;
}

template <typename T>
std::vector<T> blur_impl(std::span<const T> plane, int height, int width, double sigma) {
  std::vector<T> out(plane.begin(), plane.end());
  if (sigma <= 0.0) return out;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    total += kernel[i + radius];
  }
  for (auto& k : kernel) k /= total;
  std::vector<double> tmp(plane.size());
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += kernel[i + radius] * plane[static_cast<std::size_t>(y) * width + reflect(x + i, width)];
      tmp[static_cast<std::size_t>(y) * width + x] = acc;
    }
  }
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += kernel[i + radius] * tmp[static_cast<std::size_t>(reflect(y + i, height)) * width + x];
      out[static_cast<std::size_t>(y) * width + x] = static_cast<T>(acc);
    }
  }
  return out;
}

}  // namespace

std::vector<std::uint8_t> dilate(std::span<const std::uint8_t> mask, int height, int width, int radius) {
  return morph(mask, height, width, radius, true);
}

std::vector<std::uint8_t> erode(std::span<const std::uint8_t> mask, int height, int width, int radius) {
  return morph(mask, height, width, radius, false);
}

std::vector<float> chamfer_distance(std::span<const std::uint8_t> mask, int height, int width) {
  constexpr float kInf = std::numeric_limits<float>::max() / 4;
  constexpr float kOrtho = 1.0f;
  constexpr float kDiag = 1.41421356f;
  std::vector<float> d(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) d[i] = mask[i] != 0 ? kInf : 0.0f;
  auto at = [&](int y, int x) -> float {
    if (y < 0 || x < 0 || y >= height || x >= width) return 0.0f;
    return d[static_cast<std::size_t>(y) * width + x];
  };
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      float& v = d[static_cast<std::size_t>(y) * width + x];
      if (v == 0.0f) continue;
      v = std::min({v, at(y, x - 1) + kOrtho, at(y - 1, x) + kOrtho, at(y - 1, x - 1) + kDiag,
                    at(y - 1, x + 1) + kDiag});
    }
  }
  for (int y = height - 1; y >= 0; --y) {
    for (int x = width - 1; x >= 0; --x) {
      float& v = d[static_cast<std::size_t>(y) * width + x];
      if (v == 0.0f) continue;
      v = std::min({v, at(y, x + 1) + kOrtho, at(y + 1, x) + kOrtho, at(y + 1, x + 1) + kDiag,
                    at(y + 1, x - 1) + kDiag});
    }
  }
  return d;
}

std::vector<double> gaussian_blur(std::span<const double> plane, int height, int width, double sigma) {
  return blur_impl(plane, height, width, sigma);
}

std::vector<float> gaussian_blur(std::span<const float> plane, int height, int width, double sigma) {
  return blur_impl(plane, height, width, sigma);
}

void propagate_labels(std::vector<std::int32_t>& labels, int height, int width) {
  std::deque<std::size_t> queue;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] >= 0) queue.push_back(i);
  while (!queue.empty()) {
    const std::size_t p = queue.front();
    queue.pop_front();
    const int y = static_cast<int>(p / width);
    const int x = static_cast<int>(p % width);
    const int nbr[4][2] = {{-1, 0}, {0, -1}, {0, 1}, {1, 0}};
    for (const auto& o : nbr) {
      const int ny = y + o[0];
      const int nx = x + o[1];
      if (ny < 0 || nx < 0 || ny >= height || nx >= width) continue;
      const std::size_t q = static_cast<std::size_t>(ny) * width + nx;
      if (labels[q] >= 0) continue;
      labels[q] = labels[p];
      queue.push_back(q);
    }
  }
}

}  // namespace mangatone::imgproc
