// SPDX-License-Identifier: Apache-2.0
//
// Encoder E, decoder D and patch discriminator D_m behind a torch-free
// interface. The latent is four channels per pixel: a bounded intensity
// channel and a unit-scale type feature; the decoder applies the hypersphere
// mapping itself before synthesis.
#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "mangatone/checkpoint.hpp"
#include "mangatone/random.hpp"
#include "mangatone/raster.hpp"

namespace mangatone {

struct ModelConfig {
  int base_channels = 32;
  int encoder_levels = 3;
  int encoder_residual_blocks = 6;
  int decoder_levels = 7;        // resolution levels of the U-net, full resolution included
  int discriminator_blocks = 4;
  int latent_channels = 4;
  int channel_multiplier_cap = 4;  // widest layer is base_channels * cap
  int intensity_level = 2;       // encoder level (1/2^k resolution) the intensity head reads from
  double sigma_min = 1e-4;
  double sigma_max = 10.0;

  /// Reduced widths for CPU-scale experiments; level structure unchanged.
  static ModelConfig desk();

  void validate() const;
  /// Spatial dimensions must be divisible by this.
  int input_multiple() const { return 1 << encoder_levels; }
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct EncoderOutput {
  IntensityMap intensity;
  TypeFeatureMap mu;
  TypeFeatureMap sigma;
};

struct Encoded {
  LatentMap latent;
  EncoderOutput raw;
};

struct RandomPathResult {
  LatentMap random_latent;        // S_r: sampled intensity with the image's type feature
  GrayImage random_image;         // X_r = D(S_r)
  LatentMap reencoded;            // S~_r = E(X_r), deterministic
};

class ModelImpl;

/// Immutable-during-inference parameter set for E, D and D_m. Copies share
/// parameters; use clone() for an independent snapshot.
class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed);
  explicit Model(std::shared_ptr<ModelImpl> impl);

  const ModelConfig& config() const;
  Model clone() const;

  /// Throws ContractViolation when H or W is not a multiple of input_multiple().
  Encoded encode(const GrayImage& image, bool stochastic, Rng& rng) const;
  Encoded encode(const GrayImage& image) const;
  GrayImage decode(const LatentMap& latent) const;
  /// Patch realness scores in (0, 1), spatial size input / 2^discriminator_blocks.
  FeatureRaster discriminate(const GrayImage& image) const;
  RandomPathResult random_intensity_path(const GrayImage& image, Rng& rng, const LabelMap* labels = nullptr) const;

  std::int64_t parameter_count() const;

  ModelImpl& impl() { return *impl_; }
  const ModelImpl& impl() const { return *impl_; }

 private:
  std::shared_ptr<ModelImpl> impl_;
};

/// Parameters as checkpoint tensors named encoder.*, decoder.*, discriminator.*
/// plus a header with the config snapshot.
CheckpointFile export_model(const Model& model);
/// Rebuilds a model; tensors outside the three networks (optimizer state) are
/// ignored. Throws IoError on missing or mis-shaped parameters.
Model import_model(const CheckpointFile& file);
void save_model(const std::filesystem::path& path, const Model& model);
Model load_model(const std::filesystem::path& path);

/// Random training intensity: per region either a constant from U[0.1, 0.9]
/// or a linear ramp with endpoints from U[0.1, 0.9]; region seams are softened
/// with a small Gaussian. `labels` may be null (single region).
IntensityMap sample_random_intensity(Rng& rng, const LabelMap* labels, int height, int width);

/// Pads a page with mirrored borders up to the next multiple; returns the
/// original size so outputs can be cropped back.
GrayImage pad_to_multiple(const GrayImage& image, int multiple);

/// Caps the intra-op worker threads used by encode/decode and training.
void set_compute_threads(int threads);

}  // namespace mangatone
