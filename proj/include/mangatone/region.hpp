// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "mangatone/raster.hpp"

namespace mangatone {

/// Per-label, per-channel means: result[label][channel]. Labels with no
/// selected pixel get std::nullopt. When `mask` is given only pixels with a
/// nonzero mask value contribute.
template <typename T, typename Tag, typename MaskTag = tags::LineMask>
std::vector<std::optional<std::vector<double>>> region_means(
    const Raster<T, Tag>& feature, const LabelMap& labels,
    const Raster<std::uint8_t, MaskTag>* mask = nullptr) {
  require(feature.shape().same_plane(labels.shape()), "region_means: shape mismatch");
  if (mask != nullptr) require(mask->shape().same_plane(labels.shape()), "region_means: mask shape");
  const auto n = static_cast<std::size_t>(labels.num_labels());
  const int channels = feature.channels();
  std::vector<std::vector<double>> sums(n, std::vector<double>(channels, 0.0));
  std::vector<std::size_t> counts(n, 0);
  const auto& grid = labels.grid();
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (mask != nullptr && (*mask)[i] == 0) continue;
    const auto l = static_cast<std::size_t>(grid[i]);
    ++counts[l];
    for (int c = 0; c < channels; ++c) sums[l][c] += feature.plane(c)[i];
  }
  std::vector<std::optional<std::vector<double>>> out(n);
  for (std::size_t l = 0; l < n; ++l) {
    if (counts[l] == 0) continue;
    for (auto& s : sums[l]) s /= static_cast<double>(counts[l]);
    out[l] = std::move(sums[l]);
  }
  return out;
}

/// Replaces every pixel by the mean of its label's region, channel by channel.
template <typename T, typename Tag>
Raster<T, Tag> region_average(const Raster<T, Tag>& feature, const LabelMap& labels) {
  const auto means = region_means(feature, labels);
  Raster<T, Tag> out(feature.shape());
  const auto& grid = labels.grid();
  for (int c = 0; c < feature.channels(); ++c) {
    auto dst = out.plane(c);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      dst[i] = static_cast<T>((*means[static_cast<std::size_t>(grid[i])])[c]);
    }
  }
  return out;
}

/// Binary mask of one label.
inline RegionMask label_mask(const LabelMap& labels, int label) {
  RegionMask mask(labels.height(), labels.width(), 0);
  const auto& grid = labels.grid();
  for (std::size_t i = 0; i < grid.size(); ++i) mask[i] = grid[i] == label ? 1 : 0;
  return mask;
}

inline std::size_t mask_area(const RegionMask& mask) {
  std::size_t n = 0;
  for (auto v : mask.values()) n += v != 0 ? 1 : 0;
  return n;
}

}  // namespace mangatone
