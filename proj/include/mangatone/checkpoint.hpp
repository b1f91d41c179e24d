// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint container. Layout of a checkpoint file:
//
//   offset 0   8 bytes   magic "MGTCKPT1"
//   offset 8   u64le     header length n
//   offset 16  n bytes   UTF-8 JSON header
//   offset 16+n          tensor payload, f32le, tensors back to back
//
// The header carries "format", "version", "step", "phase", "config" and a
// "tensors" array of {"name", "shape", "offset", "numel"} where offset is in
// bytes from the start of the payload. Unknown header keys are preserved.
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace mangatone {

struct TensorBlob {
  std::vector<std::int64_t> shape;
  std::vector<float> data;

  std::int64_t numel() const;
  friend bool operator==(const TensorBlob&, const TensorBlob&) = default;
};

struct CheckpointFile {
  nlohmann::json header = nlohmann::json::object();
  std::map<std::string, TensorBlob> tensors;
};

inline constexpr int kCheckpointVersion = 1;

std::string encode_checkpoint(const CheckpointFile& file);
CheckpointFile decode_checkpoint(std::string_view bytes);

void write_checkpoint(const std::filesystem::path& path, const CheckpointFile& file);
CheckpointFile read_checkpoint(const std::filesystem::path& path);

}  // namespace mangatone
