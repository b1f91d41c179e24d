// SPDX-License-Identifier: Apache-2.0
#include "mangatone/network.hpp"

#include <algorithm>

#include "mangatone/error.hpp"
#include "mangatone/imgproc.hpp"
#include "mangatone/nn/modules.hpp"
#include "mangatone/page.hpp"
#include "mangatone/tonegen.hpp"

namespace mangatone {

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.base_channels = 16;
  return c;
}

void ModelConfig::validate() const {
  require(base_channels >= 1, "base_channels must be positive");
  require(encoder_levels >= 1 && encoder_levels <= 8, "encoder_levels must be in [1, 8]");
  require(encoder_residual_blocks >= 0, "encoder_residual_blocks must be non-negative");
  require(decoder_levels >= 2 && decoder_levels <= 10, "decoder_levels must be in [2, 10]");
  require(discriminator_blocks >= 1 && discriminator_blocks <= 8, "discriminator_blocks must be in [1, 8]");
  require(latent_channels == kLatentChannels, "latent_channels must be 4 (1 intensity + 3 type)");
  require(channel_multiplier_cap >= 1, "channel_multiplier_cap must be positive");
  require(intensity_level >= 0 && intensity_level <= encoder_levels, "intensity_level must be within the encoder");
  require(sigma_min > 0.0 && sigma_max > sigma_min, "sigma bounds must satisfy 0 < min < max");
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"base_channels", c.base_channels},
          {"encoder_levels", c.encoder_levels},
          {"encoder_residual_blocks", c.encoder_residual_blocks},
          {"decoder_levels", c.decoder_levels},
          {"discriminator_blocks", c.discriminator_blocks},
          {"latent_channels", c.latent_channels},
          {"channel_multiplier_cap", c.channel_multiplier_cap},
          {"intensity_level", c.intensity_level},
          {"sigma_min", c.sigma_min},
          {"sigma_max", c.sigma_max}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.base_channels = j.value("base_channels", c.base_channels);
  c.encoder_levels = j.value("encoder_levels", c.encoder_levels);
  c.encoder_residual_blocks = j.value("encoder_residual_blocks", c.encoder_residual_blocks);
  c.decoder_levels = j.value("decoder_levels", c.decoder_levels);
  c.discriminator_blocks = j.value("discriminator_blocks", c.discriminator_blocks);
  c.latent_channels = j.value("latent_channels", c.latent_channels);
  c.channel_multiplier_cap = j.value("channel_multiplier_cap", c.channel_multiplier_cap);
  c.intensity_level = j.value("intensity_level", c.intensity_level);
  c.sigma_min = j.value("sigma_min", c.sigma_min);
  c.sigma_max = j.value("sigma_max", c.sigma_max);
  c.validate();
  return c;
}

ModelImpl::ModelImpl(const ModelConfig& cfg, std::uint64_t seed) : config(cfg) {
  config.validate();
  encoder = register_module("encoder", nn::Encoder(config));
  decoder = register_module("decoder", nn::Decoder(config));
  discriminator = register_module("discriminator", nn::Discriminator(config));
  nn::initialize_parameters(*encoder, derive_seed(seed, 1));
  nn::initialize_parameters(*decoder, derive_seed(seed, 2));
  nn::initialize_parameters(*discriminator, derive_seed(seed, 3));
}

std::vector<torch::Tensor> ModelImpl::generator_parameters() {
  auto params = encoder->parameters();
  auto d = decoder->parameters();
  params.insert(params.end(), d.begin(), d.end());
  return params;
}

std::vector<torch::Tensor> ModelImpl::discriminator_parameters() { return discriminator->parameters(); }

Model::Model(const ModelConfig& config, std::uint64_t seed) : impl_(std::make_shared<ModelImpl>(config, seed)) {}

Model::Model(std::shared_ptr<ModelImpl> impl) : impl_(std::move(impl)) { require(impl_ != nullptr, "null model"); }

const ModelConfig& Model::config() const { return impl_->config; }

Model Model::clone() const { return import_model(export_model(*this)); }

std::int64_t Model::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : impl_->parameters()) n += p.numel();
  return n;
}

Encoded Model::encode(const GrayImage& image, bool stochastic, Rng& rng) const {
  require(image.channels() == 1, "encode expects a single-channel page");
  const int m = config().input_multiple();
  if (image.height() % m != 0 || image.width() % m != 0)
    throw ContractViolation("encode: page " + std::to_string(image.height()) + "x" + std::to_string(image.width()) +
                            " must be padded to a multiple of " + std::to_string(m) +
                            " (see pad_to_multiple)");
  torch::NoGradGuard guard;
  const auto out = impl_->encoder->forward(nn::to_tensor(image));
  Encoded result;
  result.raw.intensity = retag<IntensityMap>(nn::tensor_to_raster(out.intensity));
  result.raw.mu = retag<TypeFeatureMap>(nn::tensor_to_raster(out.mu));
  result.raw.sigma = retag<TypeFeatureMap>(nn::tensor_to_raster(out.sigma()));
  result.latent.intensity = result.raw.intensity;
  result.latent.type_feature = result.raw.mu;
  if (stochastic) {
    auto& t = result.latent.type_feature;
    for (std::size_t i = 0; i < t.size(); ++i)
      t[i] = static_cast<float>(result.raw.mu[i] + result.raw.sigma[i] * standard_normal(rng));
  }
  return result;
}

Encoded Model::encode(const GrayImage& image) const {
  Rng unused(0);
  return encode(image, false, unused);
}

GrayImage Model::decode(const LatentMap& latent) const {
  latent.validate();
  torch::NoGradGuard guard;
  auto itn = nn::to_tensor(retag<FeatureRaster>(latent.intensity));
  auto type = nn::to_tensor(retag<FeatureRaster>(latent.type_feature));
  return nn::tensor_to_gray(impl_->decoder->forward(itn, type));
}

FeatureRaster Model::discriminate(const GrayImage& image) const {
  torch::NoGradGuard guard;
  const float lo = 1e-6f;
  auto scores = torch::sigmoid(impl_->discriminator->forward(nn::to_tensor(image))).clamp(lo, 1.0f - lo);
  return nn::tensor_to_raster(scores);
}

RandomPathResult Model::random_intensity_path(const GrayImage& image, Rng& rng, const LabelMap* labels) const {
  RandomPathResult out;
  const auto encoded = encode(image);
  out.random_latent.intensity = sample_random_intensity(rng, labels, image.height(), image.width());
  out.random_latent.type_feature = encoded.latent.type_feature;
  out.random_image = decode(out.random_latent);
  out.reencoded = encode(out.random_image).latent;
  return out;
}

IntensityMap sample_random_intensity(Rng& rng, const LabelMap* labels, int height, int width) {
  require(height > 0 && width > 0, "sample_random_intensity: empty raster");
  if (labels != nullptr)
    require(labels->height() == height && labels->width() == width, "sample_random_intensity: label shape mismatch");
  const int regions = labels != nullptr ? labels->num_labels() : 1;
  IntensityMap out(height, width);
  bool any_ramp = false;
  for (int r = 0; r < regions; ++r) {
    const bool ramp = uniform01(rng) < 0.5;
    const double a = uniform(rng, 0.1, 0.9);
    IntensityDirective directive = IntensityDirective::constant(a);
    if (ramp) {
      const double b = uniform(rng, 0.1, 0.9);
      directive = IntensityDirective::linear(a, b, uniform(rng, 0.0, 360.0));
      any_ramp = true;
    }
    std::optional<Frame> frame;
    if (labels != nullptr) frame = region_frame(*labels, r);
    const auto field = directive_field(directive, height, width, frame);
    for (std::size_t i = 0; i < out.size(); ++i)
      if (labels == nullptr || labels->grid()[i] == r) out[i] = field[i];
  }
  if (regions > 1 || any_ramp) {
    auto blurred = imgproc::gaussian_blur(out.values(), height, width, 1.5);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(blurred[i], 0.0f, 1.0f);
  }
  return out;
}

GrayImage pad_to_multiple(const GrayImage& image, int multiple) {
  require(multiple >= 1, "pad_to_multiple: multiple must be positive");
  const int h = (image.height() + multiple - 1) / multiple * multiple;
  const int w = (image.width() + multiple - 1) / multiple * multiple;
  if (h == image.height() && w == image.width()) return image;
  GrayImage out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      out(y, x) = image(imgproc::reflect(y, image.height()), imgproc::reflect(x, image.width()));
  return out;
}

void set_compute_threads(int threads) {
  require(threads >= 1, "set_compute_threads: need at least one thread");
  torch::set_num_threads(threads);
}

CheckpointFile export_model(const Model& model) {
  CheckpointFile file;
  file.header = {{"format", "mangatone-checkpoint"},
                 {"version", kCheckpointVersion},
                 {"step", 0},
                 {"phase", 0},
                 {"config", to_json(model.config())}};
  for (const auto& item : model.impl().named_parameters()) {
    auto t = item.value().detach().contiguous();
    TensorBlob blob;
    blob.shape.assign(t.sizes().begin(), t.sizes().end());
    blob.data.assign(t.data_ptr<float>(), t.data_ptr<float>() + t.numel());
    file.tensors.emplace(item.key(), std::move(blob));
  }
  return file;
}

Model import_model(const CheckpointFile& file) {
  if (file.header.value("format", std::string()) != "mangatone-checkpoint")
    throw IoError("checkpoint format tag missing or unknown");
  if (file.header.value("version", 0) != kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + file.header.value("version", nlohmann::json()).dump());
  ModelConfig config;
  try {
    config = model_config_from_json(file.header.at("config"));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint config: ") + e.what());
  } catch (const ContractViolation& e) {
    throw IoError(std::string("checkpoint config: ") + e.what());
  }
  Model model(config, 0);
  torch::NoGradGuard guard;
  for (auto& item : model.impl().named_parameters()) {
    const auto it = file.tensors.find(item.key());
    if (it == file.tensors.end()) throw IoError("checkpoint lacks parameter '" + item.key() + "'");
    auto& p = item.value();
    const std::vector<std::int64_t> expected(p.sizes().begin(), p.sizes().end());
    if (it->second.shape != expected) throw IoError("checkpoint parameter '" + item.key() + "' has the wrong shape");
    std::copy(it->second.data.begin(), it->second.data.end(), p.data_ptr<float>());
  }
  return model;
}

void save_model(const std::filesystem::path& path, const Model& model) { write_checkpoint(path, export_model(model)); }

Model load_model(const std::filesystem::path& path) {
  const auto file = read_checkpoint(path);
  try {
    return import_model(file);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace mangatone
