// SPDX-License-Identifier: Apache-2.0
#include "mangatone/nn/modules.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "mangatone/error.hpp"
#include "mangatone/random.hpp"

namespace mangatone::nn {

namespace F = torch::nn::functional;

namespace {

torch::nn::Conv2d conv(int in, int out, int kernel, int stride, int padding) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, kernel).stride(stride).padding(padding));
}

torch::nn::ConvTranspose2d deconv(int in, int out) {
  return torch::nn::ConvTranspose2d(torch::nn::ConvTranspose2dOptions(in, out, 4).stride(2).padding(1));
}

}  // namespace

int level_channels(const ModelConfig& config, int level) {
  return config.base_channels * std::min(1 << level, config.channel_multiplier_cap);
}

torch::Tensor iahm_scale(const torch::Tensor& intensity, const torch::Tensor& type_feature) {
  auto r = torch::sin(intensity * std::numbers::pi);
  r = torch::where((intensity <= 0) | (intensity >= 1), torch::zeros_like(r), r);
  return r * type_feature;
}

EncoderImpl::EncoderImpl(const ModelConfig& config) : config_(config) {
  config.validate();
  const int levels = config.encoder_levels;
  stem_ = register_module("stem", conv(1, level_channels(config, 0), 3, 1, 1));
  for (int k = 1; k <= levels; ++k)
    down_.push_back(register_module("down" + std::to_string(k),
                                    conv(level_channels(config, k - 1), level_channels(config, k), 4, 2, 1)));
  const int deep = level_channels(config, levels);
  for (int b = 0; b < config.encoder_residual_blocks; ++b) {
    res_a_.push_back(register_module("res" + std::to_string(b) + "a", conv(deep, deep, 3, 1, 1)));
    res_b_.push_back(register_module("res" + std::to_string(b) + "b", conv(deep, deep, 3, 1, 1)));
  }
  for (int k = levels; k >= 1; --k) {
    const int lo = level_channels(config, k - 1);
    up_.push_back(register_module("up" + std::to_string(k), deconv(level_channels(config, k), lo)));
    fuse_.push_back(register_module("fuse" + std::to_string(k), conv(2 * lo, lo, 3, 1, 1)));
  }
  intensity_head_ =
      register_module("intensity_head", conv(level_channels(config, config.intensity_level), 1, 3, 1, 1));
  type_head_ = register_module("type_head", conv(level_channels(config, 0), 2 * kTypeChannels, 3, 1, 1));
}

EncoderTensors EncoderImpl::forward(const torch::Tensor& image) {
  const int levels = config_.encoder_levels;
  const int m = 1 << levels;
  require(image.dim() == 4 && image.size(1) == 1, "encoder expects N x 1 x H x W");
  require(image.size(2) % m == 0 && image.size(3) % m == 0,
          "encoder input " + std::to_string(image.size(2)) + "x" + std::to_string(image.size(3)) +
              " must be padded to a multiple of " + std::to_string(m));

  std::vector<torch::Tensor> skips;
  auto h = lrelu(stem_(image * 2.0 - 1.0));
  skips.push_back(h);
  for (auto& d : down_) {
    h = lrelu(d(h));
    skips.push_back(h);
  }
  for (std::size_t b = 0; b < res_a_.size(); ++b) h = h + res_b_[b](lrelu(res_a_[b](h)));

  torch::Tensor intensity;
  auto intensity_from = [&](const torch::Tensor& features, int level) {
    auto t = torch::sigmoid(intensity_head_(features));
    if (level == 0) return t;
    // Bilinear interpolation is a convex combination, so the [0, 1] bound survives.
    return F::interpolate(t, F::InterpolateFuncOptions()
                                 .size(std::vector<std::int64_t>{image.size(2), image.size(3)})
                                 .mode(torch::kBilinear)
                                 .align_corners(false));
  };
  if (config_.intensity_level == levels) intensity = intensity_from(h, levels);
  for (int i = 0; i < levels; ++i) {
    const int level = levels - 1 - i;
    h = lrelu(up_[i](h));
    h = lrelu(fuse_[i](torch::cat({h, skips[level]}, 1)));
    if (level == config_.intensity_level) intensity = intensity_from(h, level);
  }
  auto head = type_head_(h);
  auto mu = head.narrow(1, 0, kTypeChannels);
  auto log_sigma = head.narrow(1, kTypeChannels, kTypeChannels)
                       .clamp(std::log(config_.sigma_min), std::log(config_.sigma_max));
  return {intensity, mu, log_sigma};
}

DecoderImpl::DecoderImpl(const ModelConfig& config) : config_(config) {
  config.validate();
  stem_ = register_module("stem", conv(1 + kTypeChannels, level_channels(config, 0), 3, 1, 1));
  for (int k = 1; k < config.decoder_levels; ++k)
    down_.push_back(register_module("down" + std::to_string(k),
                                    conv(level_channels(config, k - 1), level_channels(config, k), 4, 2, 1)));
  for (int k = config.decoder_levels - 1; k >= 1; --k) {
    const int lo = level_channels(config, k - 1);
    up_.push_back(register_module("up" + std::to_string(k), deconv(level_channels(config, k), lo)));
    fuse_.push_back(register_module("fuse" + std::to_string(k), conv(2 * lo, lo, 3, 1, 1)));
  }
  out_ = register_module("out", conv(level_channels(config, 0), 1, 3, 1, 1));
}

torch::Tensor DecoderImpl::forward(const torch::Tensor& intensity, const torch::Tensor& type_feature) {
  require(intensity.dim() == 4 && intensity.size(1) == 1, "decoder intensity must be N x 1 x H x W");
  require(type_feature.dim() == 4 && type_feature.size(1) == kTypeChannels &&
              type_feature.size(2) == intensity.size(2) && type_feature.size(3) == intensity.size(3),
          "decoder type feature must be N x 3 x H x W aligned with the intensity");
  const std::int64_t height = intensity.size(2), width = intensity.size(3);
  const std::int64_t m = std::int64_t{1} << (config_.decoder_levels - 1);
  auto x = torch::cat({intensity * 2.0 - 1.0, iahm_scale(intensity, type_feature)}, 1);

  const std::int64_t pad_h = (m - height % m) % m, pad_w = (m - width % m) % m;
  if (pad_h > 0 || pad_w > 0) {
    const bool can_reflect = pad_h < height && pad_w < width;
    F::PadFuncOptions::mode_t mode = torch::kReplicate;
    if (can_reflect) mode = torch::kReflect;
    x = F::pad(x, F::PadFuncOptions({0, pad_w, 0, pad_h}).mode(mode));
  }

  std::vector<torch::Tensor> skips;
  auto h = lrelu(stem_(x));
  skips.push_back(h);
  for (auto& d : down_) {
    h = lrelu(d(h));
    skips.push_back(h);
  }
  skips.pop_back();
  for (std::size_t i = 0; i < up_.size(); ++i) {
    h = lrelu(up_[i](h));
    h = lrelu(fuse_[i](torch::cat({h, skips[skips.size() - 1 - i]}, 1)));
  }
  auto out = torch::sigmoid(out_(h));
  if (pad_h > 0 || pad_w > 0) out = out.narrow(2, 0, height).narrow(3, 0, width);
  return out;
}

DiscriminatorImpl::DiscriminatorImpl(const ModelConfig& config) {
  config.validate();
  int in = 1;
  for (int b = 0; b < config.discriminator_blocks; ++b) {
    const int out = level_channels(config, b);
    blocks_.push_back(register_module("block" + std::to_string(b), conv(in, out, 4, 2, 1)));
    in = out;
  }
  head_ = register_module("head", conv(in, 1, 1, 1, 0));
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& image) {
  auto h = image * 2.0 - 1.0;
  for (auto& b : blocks_) h = lrelu(b(h));
  return head_(h);
}

void initialize_parameters(torch::nn::Module& module, std::uint64_t seed) {
  torch::NoGradGuard guard;
  const double gain = std::sqrt(2.0 / (1.0 + kLeakySlope * kLeakySlope));
  Rng rng(seed);
  auto fill = [&](torch::Tensor& w, double fan_in, double scale) {
    auto* data = w.data_ptr<float>();
    for (std::int64_t i = 0; i < w.numel(); ++i)
      data[i] = static_cast<float>(scale * gain / std::sqrt(fan_in) * standard_normal(rng));
  };
  for (const auto& item : module.named_modules("", /*include_self=*/true)) {
    const auto& name = item.key();
    // Output heads and the second conv of each residual block start small so
    // the initial latent is near the prior and the residual stack near identity.
    const bool damped = name.ends_with("_head") || (name.starts_with("res") && name.ends_with("b"));
    const double scale = damped ? 0.1 : 1.0;
    if (auto* c = item.value()->as<torch::nn::Conv2dImpl>()) {
      fill(c->weight, static_cast<double>(c->weight.size(1) * c->weight.size(2) * c->weight.size(3)), scale);
      c->bias.zero_();
    } else if (auto* t = item.value()->as<torch::nn::ConvTranspose2dImpl>()) {
      // Weight is in x out x k x k; with stride s each output sees in * (k/s)^2 taps.
      const auto stride = t->options.stride()->at(0);
      const auto& w = t->weight;
      fill(t->weight, static_cast<double>(w.size(0) * w.size(2) * w.size(3)) / static_cast<double>(stride * stride),
           scale);
      t->bias.zero_();
    }
  }
}

torch::Tensor to_tensor(const GrayImage& image) {
  return torch::from_blob(const_cast<float*>(image.storage().data()), {1, 1, image.height(), image.width()},
                          torch::kFloat32)
      .clone();
}

torch::Tensor to_tensor(const FeatureRaster& raster) {
  return torch::from_blob(const_cast<float*>(raster.storage().data()),
                          {1, raster.channels(), raster.height(), raster.width()}, torch::kFloat32)
      .clone();
}

torch::Tensor latent_to_tensor(const LatentMap& latent) {
  latent.validate();
  auto itn = to_tensor(retag<FeatureRaster>(latent.intensity));
  auto type = to_tensor(retag<FeatureRaster>(latent.type_feature));
  return torch::cat({itn, type}, 1);
}

FeatureRaster tensor_to_raster(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kFloat32).contiguous();
  require(c.dim() == 4 && c.size(0) == 1, "expected a single-sample NCHW tensor");
  FeatureRaster out(Shape{static_cast<int>(c.size(1)), static_cast<int>(c.size(2)), static_cast<int>(c.size(3))});
  std::copy_n(c.data_ptr<float>(), out.size(), out.storage().begin());
  return out;
}

GrayImage tensor_to_gray(const torch::Tensor& t) {
  require(t.dim() == 4 && t.size(1) == 1, "expected a single-channel image tensor");
  return retag<GrayImage>(tensor_to_raster(t));
}

LatentMap tensor_to_latent(const torch::Tensor& intensity, const torch::Tensor& type_feature) {
  LatentMap latent{retag<IntensityMap>(tensor_to_raster(intensity)), retag<TypeFeatureMap>(tensor_to_raster(type_feature))};
  latent.validate();
  return latent;
}

}  // namespace mangatone::nn
