// SPDX-License-Identifier: Apache-2.0
//
// Central-difference gradient checks against autograd. Include after
// <torch/torch.h>.
#pragma once

#include <algorithm>
#include <functional>

#include <torch/torch.h>

namespace mangatone::oracle {

/// Norm-wise relative error between the autograd gradient of `f` at `x` and
/// central differences with step h.
inline double gradient_error(const std::function<torch::Tensor(const torch::Tensor&)>& f, torch::Tensor x,
                             double h = 1e-4) {
  x = x.detach().clone().set_requires_grad(true);
  const auto analytic = torch::autograd::grad({f(x)}, {x})[0].detach().reshape({-1});
  auto flat = x.detach().clone().reshape({-1});
  auto numeric = torch::zeros_like(flat);
  for (std::int64_t i = 0; i < flat.numel(); ++i) {
    const double v = flat[i].item<double>();
    flat[i] = v + h;
    const double up = f(flat.reshape(x.sizes())).item<double>();
    flat[i] = v - h;
    const double down = f(flat.reshape(x.sizes())).item<double>();
    flat[i] = v;
    numeric[i] = (up - down) / (2.0 * h);
  }
  const double scale = std::max({analytic.norm().item<double>(), numeric.norm().item<double>(), 1e-12});
  return (analytic - numeric).norm().item<double>() / scale;
}

/// Same check for the parameters of `module`: each parameter tensor is
/// perturbed in place (first `max_entries` entries) and restored. Returns the
/// worst relative error over all parameter tensors.
inline double parameter_gradient_error(torch::nn::Module& module, const std::function<torch::Tensor()>& objective,
                                       std::int64_t max_entries = 24, double h = 1e-4) {
  double worst = 0.0;
  for (auto& p : module.parameters()) {
    const auto original = p.detach().clone();
    auto eval_at = [&](const torch::Tensor& value) {
      torch::NoGradGuard guard;
      p.copy_(value);
      return objective();
    };
    module.zero_grad();
    objective().backward();
    const auto analytic = p.grad().detach().clone().reshape({-1});
    auto flat = original.clone().reshape({-1});
    const auto n = std::min<std::int64_t>(flat.numel(), max_entries);
    auto numeric = torch::zeros({n}, torch::kFloat64);
    for (std::int64_t i = 0; i < n; ++i) {
      const double v = flat[i].item<double>();
      flat[i] = v + h;
      const double up = eval_at(flat.reshape(original.sizes())).item<double>();
      flat[i] = v - h;
      const double down = eval_at(flat.reshape(original.sizes())).item<double>();
      flat[i] = v;
      numeric[i] = (up - down) / (2.0 * h);
    }
    eval_at(original);
    const auto a = analytic.slice(0, 0, n);
    const double scale = std::max({a.norm().item<double>(), numeric.norm().item<double>(), 1e-12});
    worst = std::max(worst, (a - numeric).norm().item<double>() / scale);
  }
  return worst;
}

inline torch::Tensor rand64(std::vector<std::int64_t> shape, double lo = 0.0, double hi = 1.0) {
  return torch::rand(shape, torch::kFloat64) * (hi - lo) + lo;
}

}  // namespace mangatone::oracle
