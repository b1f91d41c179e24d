// SPDX-License-Identifier: Apache-2.0
//
// On-disk formats:
//   * pages: 8-bit grayscale PNG, 255 = white paper;
//   * real-valued maps: raw little-endian float32, row-major, channel-first,
//     described by a JSON sidecar {"shape":[C,H,W],"dtype":"f32le","channels":[...]};
//   * label rasters: raw little-endian uint16, row-major;
//   * latent bundles (single stream): u32le header length, JSON header, f32le payload.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mangatone/raster.hpp"

namespace mangatone::io {

namespace fs = std::filesystem;

std::vector<std::uint8_t> read_bytes(const fs::path& path);
void write_bytes(const fs::path& path, std::string_view bytes);
void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes);
std::string read_text(const fs::path& path);
nlohmann::json read_json(const fs::path& path);
void write_json(const fs::path& path, const nlohmann::json& doc);

/// Decodes any PNG into unit-interval gray (color inputs are converted).
GrayImage decode_png(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_png(const GrayImage& image);
/// 3 x H x W unit-interval raster as an RGB PNG.
std::vector<std::uint8_t> encode_png_rgb(const FeatureRaster& rgb);

GrayImage load_png(const fs::path& path);
void save_png(const fs::path& path, const GrayImage& image);
void save_png_rgb(const fs::path& path, const FeatureRaster& rgb);

inline GrayImage mask_to_image(const LineMask& mask) {
  GrayImage img(mask.height(), mask.width());
  for (std::size_t i = 0; i < mask.size(); ++i) img[i] = mask[i] != 0 ? 1.0f : 0.0f;
  return img;
}
inline LineMask image_to_mask(const GrayImage& image) {
  LineMask mask(image.height(), image.width());
  for (std::size_t i = 0; i < image.size(); ++i) mask[i] = image[i] >= 0.5f ? 1 : 0;
  return mask;
}

std::string encode_f32le(std::span<const float> values);
std::vector<float> decode_f32le(std::string_view bytes);

/// Raw f32le array; the sidecar JSON is written to `sidecar_path(path)`.
void save_f32(const fs::path& path, std::span<const float> values, const Shape& shape,
              const std::vector<std::string>& channels = {});
/// Raw f32le array without a sidecar (shape known from context).
void save_f32_raw(const fs::path& path, std::span<const float> values);
std::vector<float> load_f32_raw(const fs::path& path, std::size_t expected_count);

/// Reads a raw array through its sidecar.
struct F32Array {
  Shape shape;
  std::vector<std::string> channels;
  std::vector<float> values;
};
F32Array load_f32(const fs::path& path);
fs::path sidecar_path(const fs::path& path);

void save_labels_u16(const fs::path& path, const LabelMap& labels);
LabelMap load_labels_u16(const fs::path& path, int height, int width);

inline const std::vector<std::string>& latent_channel_names() {
  static const std::vector<std::string> names{"itn", "scr0", "scr1", "scr2"};
  return names;
}

nlohmann::json latent_header(const LatentMap& latent);
void save_latent(const fs::path& path, const LatentMap& latent);
LatentMap load_latent(const fs::path& path);
std::string encode_latent_bundle(const LatentMap& latent);
LatentMap decode_latent_bundle(std::string_view bytes);

}  // namespace mangatone::io
