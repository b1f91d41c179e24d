// SPDX-License-Identifier: Apache-2.0
#include "mangatone/io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mangatone::io {

static_assert(std::endian::native == std::endian::little, "raw array formats assume a little-endian host");

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_bytes(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  write_bytes(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const nlohmann::json& doc) { write_bytes(path, doc.dump(2) + "\n"); }

GrayImage decode_png(std::span<const std::uint8_t> bytes) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
    throw IoError(std::string("invalid PNG: ") + image.message);
  image.format = PNG_FORMAT_GRAY;
  if (image.width == 0 || image.height == 0) {
    png_image_free(&image);
    throw IoError("PNG has zero size");
  }
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr))
    throw IoError(std::string("PNG decode failed: ") + image.message);
  GrayImage out(static_cast<int>(image.height), static_cast<int>(image.width));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(buffer[i]) / 255.0f;
  return out;
}

namespace {

std::vector<std::uint8_t> write_png(png_image& image, const std::vector<std::uint8_t>& pixels) {
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, pixels.data(), 0, nullptr))
    throw IoError(std::string("PNG encode failed: ") + image.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, pixels.data(), 0, nullptr))
    throw IoError(std::string("PNG encode failed: ") + image.message);
  out.resize(size);
  return out;
}

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

}  // namespace

std::vector<std::uint8_t> encode_png(const GrayImage& image) {
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width());
  png.height = static_cast<png_uint_32>(image.height());
  png.format = PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> pixels(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) pixels[i] = to_byte(image[i]);
  return write_png(png, pixels);
}

std::vector<std::uint8_t> encode_png_rgb(const FeatureRaster& rgb) {
  require(rgb.channels() == 3, "RGB PNG needs a 3-channel raster");
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(rgb.width());
  png.height = static_cast<png_uint_32>(rgb.height());
  png.format = PNG_FORMAT_RGB;
  const std::size_t plane = rgb.shape().plane_size();
  std::vector<std::uint8_t> pixels(plane * 3);
  for (std::size_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c) pixels[i * 3 + c] = to_byte(rgb.plane(c)[i]);
  return write_png(png, pixels);
}

GrayImage load_png(const fs::path& path) {
  const auto bytes = read_bytes(path);
  try {
    return decode_png(bytes);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

void save_png(const fs::path& path, const GrayImage& image) { write_bytes(path, encode_png(image)); }

void save_png_rgb(const fs::path& path, const FeatureRaster& rgb) { write_bytes(path, encode_png_rgb(rgb)); }

std::string encode_f32le(std::span<const float> values) {
  std::string out(values.size() * sizeof(float), '\0');
  std::memcpy(out.data(), values.data(), out.size());
  return out;
}

std::vector<float> decode_f32le(std::string_view bytes) {
  require(bytes.size() % sizeof(float) == 0, "f32le payload length is not a multiple of 4");
  std::vector<float> out(bytes.size() / sizeof(float));
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

fs::path sidecar_path(const fs::path& path) {
  fs::path out = path;
  out.replace_extension(".json");
  return out;
}

void save_f32_raw(const fs::path& path, std::span<const float> values) { write_bytes(path, encode_f32le(values)); }

std::vector<float> load_f32_raw(const fs::path& path, std::size_t expected_count) {
  const auto bytes = read_bytes(path);
  if (bytes.size() != expected_count * sizeof(float))
    throw IoError(path.string() + ": expected " + std::to_string(expected_count) + " floats, found " +
                  std::to_string(bytes.size()) + " bytes");
  return decode_f32le(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

void save_f32(const fs::path& path, std::span<const float> values, const Shape& shape,
              const std::vector<std::string>& channels) {
  require(values.size() == shape.size(), "save_f32: value count does not match shape");
  nlohmann::json side{{"shape", {shape.channels, shape.height, shape.width}}, {"dtype", "f32le"}};
  if (!channels.empty()) side["channels"] = channels;
  save_f32_raw(path, values);
  write_bytes(sidecar_path(path), side.dump() + "\n");
}

namespace {

Shape parse_shape_header(const nlohmann::json& side, const std::string& where) {
  if (!side.contains("shape") || !side["shape"].is_array() || side["shape"].size() != 3)
    throw IoError(where + ": sidecar needs a 3-element shape");
  if (side.value("dtype", std::string()) != "f32le") throw IoError(where + ": dtype must be f32le");
  const Shape shape{side["shape"][0].get<int>(), side["shape"][1].get<int>(), side["shape"][2].get<int>()};
  if (shape.channels < 1 || shape.height < 1 || shape.width < 1) throw IoError(where + ": invalid shape");
  return shape;
}

LatentMap latent_from_values(const Shape& shape, const std::vector<float>& values, const std::string& where) {
  if (shape.channels != kLatentChannels) throw IoError(where + ": latent must have 4 channels");
  LatentMap latent{IntensityMap(shape.height, shape.width),
                   make_type_feature(shape.height, shape.width)};
  const std::size_t plane = shape.plane_size();
  std::copy_n(values.begin(), plane, latent.intensity.storage().begin());
  std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(plane), 3 * plane, latent.type_feature.storage().begin());
  return latent;
}

std::vector<float> latent_values(const LatentMap& latent) {
  latent.validate();
  std::vector<float> values;
  values.reserve(latent.intensity.size() + latent.type_feature.size());
  values.insert(values.end(), latent.intensity.storage().begin(), latent.intensity.storage().end());
  values.insert(values.end(), latent.type_feature.storage().begin(), latent.type_feature.storage().end());
  return values;
}

}  // namespace

F32Array load_f32(const fs::path& path) {
  const auto side = read_json(sidecar_path(path));
  F32Array out;
  out.shape = parse_shape_header(side, path.string());
  if (side.contains("channels")) out.channels = side["channels"].get<std::vector<std::string>>();
  out.values = load_f32_raw(path, out.shape.size());
  return out;
}

void save_labels_u16(const fs::path& path, const LabelMap& labels) {
  require(labels.num_labels() <= 65536, "too many labels for a u16 raster");
  std::string bytes(labels.grid().size() * 2, '\0');
  for (std::size_t i = 0; i < labels.grid().size(); ++i) {
    const auto v = static_cast<std::uint16_t>(labels.grid()[i]);
    bytes[2 * i] = static_cast<char>(v & 0xff);
    bytes[2 * i + 1] = static_cast<char>(v >> 8);
  }
  write_bytes(path, bytes);
}

LabelMap load_labels_u16(const fs::path& path, int height, int width) {
  const auto bytes = read_bytes(path);
  const std::size_t n = static_cast<std::size_t>(height) * width;
  if (bytes.size() != 2 * n) throw IoError(path.string() + ": label raster size mismatch");
  LabelMap::Grid grid(height, width);
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    grid[i] = static_cast<std::int32_t>(bytes[2 * i] | (bytes[2 * i + 1] << 8));
    max_label = std::max(max_label, grid[i]);
  }
  return LabelMap(std::move(grid), max_label + 1);
}

nlohmann::json latent_header(const LatentMap& latent) {
  return {{"shape", {kLatentChannels, latent.height(), latent.width()}},
          {"dtype", "f32le"},
          {"channels", latent_channel_names()}};
}

void save_latent(const fs::path& path, const LatentMap& latent) {
  const auto values = latent_values(latent);
  save_f32(path, values, Shape{kLatentChannels, latent.height(), latent.width()}, latent_channel_names());
}

LatentMap load_latent(const fs::path& path) {
  auto arr = load_f32(path);
  return latent_from_values(arr.shape, arr.values, path.string());
}

std::string encode_latent_bundle(const LatentMap& latent) {
  const std::string header = latent_header(latent).dump();
  const auto n = static_cast<std::uint32_t>(header.size());
  std::string out;
  out.push_back(static_cast<char>(n & 0xff));
  out.push_back(static_cast<char>((n >> 8) & 0xff));
  out.push_back(static_cast<char>((n >> 16) & 0xff));
  out.push_back(static_cast<char>((n >> 24) & 0xff));
  out += header;
  out += encode_f32le(latent_values(latent));
  return out;
}

LatentMap decode_latent_bundle(std::string_view bytes) {
  if (bytes.size() < 4) throw IoError("latent bundle too short");
  const auto b = [&](std::size_t i) { return static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes[i])); };
  const std::uint32_t n = b(0) | (b(1) << 8) | (b(2) << 16) | (b(3) << 24);
  if (bytes.size() < 4 + static_cast<std::size_t>(n)) throw IoError("latent bundle header truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(4, n));
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(std::string("latent bundle header: ") + e.what());
  }
  const Shape shape = parse_shape_header(header, "latent bundle");
  const auto payload = bytes.substr(4 + n);
  if (payload.size() != shape.size() * sizeof(float)) throw IoError("latent bundle payload size mismatch");
  return latent_from_values(shape, decode_f32le(payload), "latent bundle");
}

}  // namespace mangatone::io
