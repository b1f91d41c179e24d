// SPDX-License-Identifier: Apache-2.0
//
// Differentiable loss terms on NCHW tensors (any floating dtype).
#pragma once

#include <torch/torch.h>

namespace mangatone::nn {

torch::Tensor mse(const torch::Tensor& a, const torch::Tensor& b);

/// 0.5 * mean(sigma^2 + mu^2 - log sigma^2 - 1), parameterised by log sigma.
torch::Tensor kl_divergence(const torch::Tensor& mu, const torch::Tensor& log_sigma);

/// type: N x C x H x W; labels: N x H x W int64 (per-sample label ids);
/// weight: N x 1 x H x W, zero on structural lines and on samples without
/// labels. Region means run over every pixel of the region.
torch::Tensor feature_consistency(const torch::Tensor& type, const torch::Tensor& labels, const torch::Tensor& weight);

struct AdversarialTensors {
  torch::Tensor generator;
  torch::Tensor discriminator;
};

/// Scores in (0, 1); logs floored at log(1e-8).
AdversarialTensors adversarial_from_scores(const torch::Tensor& real, const torch::Tensor& fake_rec,
                                           const torch::Tensor& fake_rand);
/// Same objective on pre-sigmoid logits, with the same floor on each log term.
AdversarialTensors adversarial_from_logits(const torch::Tensor& real, const torch::Tensor& fake_rec,
                                           const torch::Tensor& fake_rand);

}  // namespace mangatone::nn
