// SPDX-License-Identifier: Apache-2.0
//
// libtorch building blocks behind mangatone::Model. Tensors are NCHW float32;
// images are in [0, 1] with 0 = ink.
#pragma once

#include <cstdint>
#include <vector>

#include <torch/torch.h>

#include "mangatone/network.hpp"
#include "mangatone/raster.hpp"

namespace mangatone::nn {

inline constexpr double kLeakySlope = 0.2;

inline torch::Tensor lrelu(const torch::Tensor& x) { return torch::leaky_relu(x, kLeakySlope); }

/// r = sin(pi * t) with the extremes pinned to exactly zero.
torch::Tensor iahm_scale(const torch::Tensor& intensity, const torch::Tensor& type_feature);

struct EncoderTensors {
  torch::Tensor intensity;   // N x 1 x H x W, in [0, 1]
  torch::Tensor mu;          // N x 3 x H x W
  torch::Tensor log_sigma;   // N x 3 x H x W, clamped
  torch::Tensor sigma() const { return log_sigma.exp(); }
};

class EncoderImpl : public torch::nn::Module {
 public:
  explicit EncoderImpl(const ModelConfig& config);
  EncoderTensors forward(const torch::Tensor& image);

 private:
  ModelConfig config_;
  torch::nn::Conv2d stem_{nullptr};
  std::vector<torch::nn::Conv2d> down_;
  std::vector<torch::nn::Conv2d> res_a_, res_b_;
  std::vector<torch::nn::ConvTranspose2d> up_;
  std::vector<torch::nn::Conv2d> fuse_;
  torch::nn::Conv2d intensity_head_{nullptr};
  torch::nn::Conv2d type_head_{nullptr};
};
TORCH_MODULE(Encoder);

class DecoderImpl : public torch::nn::Module {
 public:
  explicit DecoderImpl(const ModelConfig& config);
  /// intensity: N x 1 x H x W; type_feature: unit-scale N x 3 x H x W.
  torch::Tensor forward(const torch::Tensor& intensity, const torch::Tensor& type_feature);

 private:
  ModelConfig config_;
  torch::nn::Conv2d stem_{nullptr};
  std::vector<torch::nn::Conv2d> down_;
  std::vector<torch::nn::ConvTranspose2d> up_;
  std::vector<torch::nn::Conv2d> fuse_;
  torch::nn::Conv2d out_{nullptr};
};
TORCH_MODULE(Decoder);

class DiscriminatorImpl : public torch::nn::Module {
 public:
  explicit DiscriminatorImpl(const ModelConfig& config);
  /// Pre-sigmoid patch logits, N x 1 x H/16 x W/16.
  torch::Tensor forward(const torch::Tensor& image);

 private:
  std::vector<torch::nn::Conv2d> blocks_;
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(Discriminator);

/// Width of the layer at resolution level k (1/2^k of the input).
int level_channels(const ModelConfig& config, int level);

/// Scaled-variance normal initialisation (leaky-ReLU gain) drawn from a
/// seeded generator so parameters depend only on the seed; biases start at 0.
void initialize_parameters(torch::nn::Module& module, std::uint64_t seed);

torch::Tensor to_tensor(const GrayImage& image);
torch::Tensor to_tensor(const FeatureRaster& raster);
/// Stacks a latent into a 1 x 4 x H x W tensor.
torch::Tensor latent_to_tensor(const LatentMap& latent);
GrayImage tensor_to_gray(const torch::Tensor& t);
FeatureRaster tensor_to_raster(const torch::Tensor& t);
LatentMap tensor_to_latent(const torch::Tensor& intensity, const torch::Tensor& type_feature);

}  // namespace mangatone::nn

namespace mangatone {

class ModelImpl : public torch::nn::Module {
 public:
  ModelImpl(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig config;
  nn::Encoder encoder{nullptr};
  nn::Decoder decoder{nullptr};
  nn::Discriminator discriminator{nullptr};

  std::vector<torch::Tensor> generator_parameters();
  std::vector<torch::Tensor> discriminator_parameters();
};

}  // namespace mangatone
