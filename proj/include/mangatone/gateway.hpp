// SPDX-License-Identifier: Apache-2.0
//
// HTTP service over the rescreening pipeline. Projects are event-sourced: a
// project is its source page, its base latent and an ordered edit history,
// all kept in a content-addressed blob store with one JSON record per
// project, so any preview can be rebuilt bit for bit by replaying history.
//
// Routes (JSON unless noted; every non-2xx body is {"error": ApiError}):
//   GET    /healthz
//   GET    /palette                         palette entries with thumbnail URLs
//   GET    /palette/{i}.png                 decoded swatch at intensity 0.5
//   POST   /projects                        body: PNG page            -> 201 descriptor
//   GET    /projects/{id}                   descriptor with history and segmentation
//   POST   /projects/{id}/segment           {"k_min","k_max","seed"} -> summary
//   GET    /projects/{id}/labels.png        label raster, pixel value = label
//   GET    /projects/{id}/layers/{name}.png original | intensity | type_pca | segmentation | preview
//   POST   /projects/{id}/masks             body: PNG mask (white = selected) -> {"mask": id}
//   POST   /projects/{id}/edits             {"version"?, "edit": RegionEdit JSON} -> preview descriptor
//   DELETE /projects/{id}/edits/last        undo
//   GET    /projects/{id}/preview           PNG
//   GET    /projects/{id}/latent            latent bundle (application/octet-stream)
//   PUT    /projects/{id}/latent            replace the base latent, clearing history
// Writes accept an expected version in the body, "?version=" or If-Match and
// answer 409 conflict when it is stale.
#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

namespace mangatone {

struct GatewayConfig {
  std::string host = "127.0.0.1";
  int port = 8080;                       // 0 picks a free port
  std::filesystem::path data_dir = "mangatone-data";
  std::optional<std::filesystem::path> checkpoint;
  std::size_t max_upload_bytes = 32u << 20;
  int max_side = 4096;
  int palette_size = 12;
  std::uint64_t palette_seed = 0;
  /// Static bundle served under /app when the directory exists.
  std::optional<std::filesystem::path> static_dir;
  int threads = 8;

  void validate() const;
};

nlohmann::json to_json(const GatewayConfig& config);
/// Missing keys keep their defaults.
GatewayConfig gateway_config_from_json(const nlohmann::json& j);
/// Applies MANGATONE_HOST, MANGATONE_PORT, MANGATONE_DATA_DIR, MANGATONE_CKPT,
/// MANGATONE_MAX_UPLOAD_BYTES and MANGATONE_MAX_SIDE when set.
void apply_environment(GatewayConfig& config);

enum class ApiErrorCode { bad_input, not_found, model_unready, conflict, internal };

std::string to_string(ApiErrorCode code);
int http_status(ApiErrorCode code);

struct ApiError {
  ApiErrorCode code = ApiErrorCode::internal;
  std::string message;
  nlohmann::json detail = nullptr;

  nlohmann::json to_json() const;
};

class Gateway {
 public:
  explicit Gateway(GatewayConfig config);
  ~Gateway();
  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  /// Binds the socket; returns the bound port. Throws IoError on failure.
  int bind();
  /// Serves until stop(); bind() is called first when needed.
  void listen();
  void stop();
  /// Blocks until the server accepts connections.
  void wait_until_ready() const;

  bool model_ready() const;
  const GatewayConfig& config() const;

 private:
  struct State;
  std::unique_ptr<State> state_;
};

}  // namespace mangatone
