// SPDX-License-Identifier: Apache-2.0
//
// Raster data model shared by every module. Storage is row-major and
// channel-first: element (c, y, x) lives at ((c * height) + y) * width + x.
#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "mangatone/error.hpp"

namespace mangatone {

struct Shape {
  int channels = 1;
  int height = 0;
  int width = 0;

  std::size_t plane_size() const { return static_cast<std::size_t>(height) * width; }
  std::size_t size() const { return plane_size() * channels; }
  bool same_plane(const Shape& other) const {
    return height == other.height && width == other.width;
  }
  friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
  return std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" +
         std::to_string(s.width);
}

/// Dense C x H x W array. The Tag parameter only distinguishes domain types
/// (a GrayImage cannot be passed where an IntensityMap is expected).
template <typename T, typename Tag>
class Raster {
 public:
  using value_type = T;

  Raster() = default;

  Raster(int height, int width, T fill = T{}) : Raster(Shape{1, height, width}, fill) {}

  explicit Raster(Shape shape, T fill = T{}) : shape_(shape) {
    require(shape.channels >= 1 && shape.height >= 1 && shape.width >= 1,
            "raster dimensions must be positive, got " + to_string(shape));
    data_.assign(shape.size(), fill);
  }

  Raster(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    require(shape.channels >= 1 && shape.height >= 1 && shape.width >= 1,
            "raster dimensions must be positive, got " + to_string(shape));
    require(data_.size() == shape.size(), "raster data size does not match shape");
  }

  const Shape& shape() const { return shape_; }
  int channels() const { return shape_.channels; }
  int height() const { return shape_.height; }
  int width() const { return shape_.width; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(int y, int x) { return data_[index(0, y, x)]; }
  const T& operator()(int y, int x) const { return data_[index(0, y, x)]; }
  T& operator()(int c, int y, int x) { return data_[index(c, y, x)]; }
  const T& operator()(int c, int y, int x) const { return data_[index(c, y, x)]; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  std::span<T> plane(int c) {
    return std::span<T>(data_).subspan(static_cast<std::size_t>(c) * shape_.plane_size(),
                                       shape_.plane_size());
  }
  std::span<const T> plane(int c) const {
    return std::span<const T>(data_).subspan(static_cast<std::size_t>(c) * shape_.plane_size(),
                                             shape_.plane_size());
  }

  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  bool in_bounds(int y, int x) const {
    return y >= 0 && x >= 0 && y < shape_.height && x < shape_.width;
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  friend bool operator==(const Raster& a, const Raster& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * shape_.height + y) * shape_.width + x;
  }

  Shape shape_{};
  std::vector<T> data_;
};

/// Reinterpret a raster as another domain type with the same element type.
template <typename To, typename From>
To retag(const From& from) {
  return To(from.shape(), from.storage());
}

template <typename To, typename From>
  requires(!std::is_lvalue_reference_v<From>)
To retag(From&& from) {
  Shape shape = from.shape();
  return To(shape, std::move(from.storage()));
}

namespace tags {
struct Gray;
struct Bitonal;
struct Intensity;
struct TypeFeature;
struct Label;
struct LineMask;
struct Mask;
struct Feature;
}  // namespace tags

/// Unit-interval page raster: 0 = black ink, 1 = white paper.
using GrayImage = Raster<float, tags::Gray>;
/// Page raster restricted to {0, 1}.
using BitonalImage = Raster<float, tags::Bitonal>;
/// Tone darkness as ink coverage: 0 = white, 1 = black.
using IntensityMap = Raster<float, tags::Intensity>;
/// 3 x H x W screentone type feature.
using TypeFeatureMap = Raster<float, tags::TypeFeature>;
/// 0 = structural line pixel, 1 = tone pixel.
using LineMask = Raster<std::uint8_t, tags::LineMask>;
/// Generic binary region mask (1 = inside).
using RegionMask = Raster<std::uint8_t, tags::Mask>;
/// Arbitrary multi-channel real feature raster (Gabor responses, PCA colors, ...).
using FeatureRaster = Raster<float, tags::Feature>;

inline constexpr int kTypeChannels = 3;
inline constexpr int kLatentChannels = 4;

inline TypeFeatureMap make_type_feature(int height, int width, float fill = 0.0f) {
  return TypeFeatureMap(Shape{kTypeChannels, height, width}, fill);
}

/// Per-pixel label raster together with its label count.
class LabelMap {
 public:
  using Grid = Raster<std::int32_t, tags::Label>;

  LabelMap() = default;
  LabelMap(Grid labels, int num_labels);
  LabelMap(int height, int width, int num_labels = 1)
      : LabelMap(Grid(height, width, 0), num_labels) {}

  int height() const { return labels_.height(); }
  int width() const { return labels_.width(); }
  Shape shape() const { return labels_.shape(); }
  int num_labels() const { return num_labels_; }
  std::int32_t operator()(int y, int x) const { return labels_(y, x); }
  const Grid& grid() const { return labels_; }

  /// Pixel counts per label.
  std::vector<std::size_t> areas() const;

  friend bool operator==(const LabelMap&, const LabelMap&) = default;

 private:
  Grid labels_;
  int num_labels_ = 0;
};

inline LabelMap::LabelMap(Grid labels, int num_labels)
    : labels_(std::move(labels)), num_labels_(num_labels) {
  require(num_labels_ >= 1, "label map needs at least one label");
  for (auto v : labels_.values()) {
    require(v >= 0 && v < num_labels_, "label value out of range");
  }
}

inline std::vector<std::size_t> LabelMap::areas() const {
  std::vector<std::size_t> out(static_cast<std::size_t>(num_labels_), 0);
  for (auto v : labels_.values()) ++out[static_cast<std::size_t>(v)];
  return out;
}

/// The 4-channel latent: one intensity channel plus the unit-scale (pre-IAHM)
/// type feature.
struct LatentMap {
  IntensityMap intensity;
  TypeFeatureMap type_feature;

  int height() const { return intensity.height(); }
  int width() const { return intensity.width(); }
  void validate() const {
    require(intensity.channels() == 1, "latent intensity must have one channel");
    require(type_feature.channels() == kTypeChannels, "latent type feature must have 3 channels");
    require(intensity.shape().same_plane(type_feature.shape()),
            "latent intensity and type feature must share H x W");
  }
  friend bool operator==(const LatentMap&, const LatentMap&) = default;
};

inline bool is_bitonal(std::span<const float> v) {
  return std::all_of(v.begin(), v.end(), [](float p) { return p == 0.0f || p == 1.0f; });
}

inline bool in_unit_interval(std::span<const float> v) {
  return std::all_of(v.begin(), v.end(), [](float p) { return p >= 0.0f && p <= 1.0f; });
}

/// Checked conversion: throws unless every pixel is exactly 0 or 1.
inline BitonalImage to_bitonal(const GrayImage& image) {
  require(is_bitonal(image.values()), "image is not bitonal");
  return retag<BitonalImage>(image);
}

/// Thresholded conversion at 0.5.
inline BitonalImage binarize(const GrayImage& image) {
  BitonalImage out(image.shape());
  for (std::size_t i = 0; i < image.size(); ++i) out[i] = image[i] >= 0.5f ? 1.0f : 0.0f;
  return out;
}

inline GrayImage to_gray(const BitonalImage& image) { return retag<GrayImage>(image); }

/// Fraction of ink (0-valued) pixels.
inline double ink_coverage(std::span<const float> pixels) {
  if (pixels.empty()) return 0.0;
  std::size_t ink = 0;
  for (float p : pixels) ink += p < 0.5f ? 1 : 0;
  return static_cast<double>(ink) / static_cast<double>(pixels.size());
}

inline LineMask all_tone_mask(int height, int width) { return LineMask(height, width, 1); }

}  // namespace mangatone
