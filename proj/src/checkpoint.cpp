// SPDX-License-Identifier: Apache-2.0
#include "mangatone/checkpoint.hpp"

#include <cstring>
#include <functional>
#include <numeric>

#include "mangatone/error.hpp"
#include "mangatone/io.hpp"

namespace mangatone {

namespace {

constexpr char kMagic[8] = {'M', 'G', 'T', 'C', 'K', 'P', 'T', '1'};

std::int64_t product(const std::vector<std::int64_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

}  // namespace

std::int64_t TensorBlob::numel() const { return product(shape); }

std::string encode_checkpoint(const CheckpointFile& file) {
  nlohmann::json header = file.header;
  header["tensors"] = nlohmann::json::array();
  std::int64_t offset = 0;
  for (const auto& [name, blob] : file.tensors) {
    require(blob.numel() == static_cast<std::int64_t>(blob.data.size()),
            "checkpoint tensor '" + name + "' data does not match its shape");
    header["tensors"].push_back({{"name", name}, {"shape", blob.shape}, {"offset", offset}, {"numel", blob.numel()}});
    offset += blob.numel() * static_cast<std::int64_t>(sizeof(float));
  }
  const std::string text = header.dump();
  std::string out(kMagic, sizeof(kMagic));
  const std::uint64_t n = text.size();
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((n >> (8 * i)) & 0xff));
  out += text;
  out.reserve(out.size() + static_cast<std::size_t>(offset));
  for (const auto& [name, blob] : file.tensors) out += io::encode_f32le(blob.data);
  return out;
}

CheckpointFile decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw IoError("not a mangatone checkpoint (bad magic)");
  std::uint64_t n = 0;
  for (int i = 0; i < 8; ++i) n |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(bytes[8 + i])) << (8 * i);
  if (bytes.size() < 16 + n) throw IoError("checkpoint header truncated");
  CheckpointFile file;
  try {
    file.header = nlohmann::json::parse(bytes.substr(16, n));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint header: ") + e.what());
  }
  const std::string_view payload = bytes.substr(16 + n);
  if (!file.header.contains("tensors") || !file.header["tensors"].is_array())
    throw IoError("checkpoint header lacks a tensors table");
  for (const auto& entry : file.header["tensors"]) {
    TensorBlob blob;
    blob.shape = entry.at("shape").get<std::vector<std::int64_t>>();
    const auto offset = entry.at("offset").get<std::int64_t>();
    const auto count = blob.numel();
    const auto nbytes = static_cast<std::size_t>(count) * sizeof(float);
    if (offset < 0 || static_cast<std::size_t>(offset) + nbytes > payload.size())
      throw IoError("checkpoint tensor '" + entry.at("name").get<std::string>() + "' exceeds the payload");
    blob.data = io::decode_f32le(payload.substr(static_cast<std::size_t>(offset), nbytes));
    file.tensors.emplace(entry.at("name").get<std::string>(), std::move(blob));
  }
  file.header.erase("tensors");
  return file;
}

void write_checkpoint(const std::filesystem::path& path, const CheckpointFile& file) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // Write-then-rename so an interrupted save never leaves a torn checkpoint.
  auto tmp = path;
  tmp += ".partial";
  io::write_bytes(tmp, encode_checkpoint(file));
  std::filesystem::rename(tmp, path);
}

CheckpointFile read_checkpoint(const std::filesystem::path& path) {
  const auto bytes = io::read_bytes(path);
  try {
    return decode_checkpoint(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace mangatone
