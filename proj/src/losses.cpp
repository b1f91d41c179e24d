// SPDX-License-Identifier: Apache-2.0
#include "mangatone/losses.hpp"

#include <cmath>

#include "mangatone/error.hpp"
#include "mangatone/log.hpp"
#include "mangatone/nn/losses.hpp"

namespace mangatone {

namespace nn {

torch::Tensor mse(const torch::Tensor& a, const torch::Tensor& b) { return (a - b).square().mean(); }

torch::Tensor kl_divergence(const torch::Tensor& mu, const torch::Tensor& log_sigma) {
  return 0.5 * (torch::exp(2.0 * log_sigma) + mu.square() - 2.0 * log_sigma - 1.0).mean();
}

torch::Tensor feature_consistency(const torch::Tensor& type, const torch::Tensor& labels, const torch::Tensor& weight) {
  const auto n = type.size(0), c = type.size(1);
  auto numerator = torch::zeros({}, type.options());
  for (std::int64_t i = 0; i < n; ++i) {
    const auto flat = labels[i].reshape({-1});
    const auto k = flat.max().item<std::int64_t>() + 1;
    const auto f = type[i].reshape({c, -1});
    auto sums = torch::zeros({c, k}, type.options()).index_add(1, flat, f);
    auto counts = torch::bincount(flat, {}, k).to(type.scalar_type()).clamp_min(1);
    auto mean_px = (sums / counts).index_select(1, flat);
    numerator = numerator + ((f - mean_px).square() * weight[i].reshape({1, -1})).sum();
  }
  const auto denom = weight.sum() * static_cast<double>(c);
  if (denom.item<double>() <= 0.0) return numerator * 0.0;
  return numerator / denom;
}

AdversarialTensors adversarial_from_scores(const torch::Tensor& real, const torch::Tensor& fake_rec,
                                           const torch::Tensor& fake_rand) {
  auto log_of = [](const torch::Tensor& s) { return torch::log(s.clamp_min(kLogGuard)); };
  AdversarialTensors out;
  out.discriminator = -(log_of(real) + log_of(1.0 - fake_rec) + log_of(1.0 - fake_rand)).mean();
  out.generator = -(log_of(fake_rec) + log_of(fake_rand)).mean();
  return out;
}

AdversarialTensors adversarial_from_logits(const torch::Tensor& real, const torch::Tensor& fake_rec,
                                           const torch::Tensor& fake_rand) {
  const double floor = std::log(kLogGuard);
  auto log_sig = [floor](const torch::Tensor& l) { return torch::log_sigmoid(l).clamp_min(floor); };
  AdversarialTensors out;
  out.discriminator = -(log_sig(real) + log_sig(-fake_rec) + log_sig(-fake_rand)).mean();
  out.generator = -(log_sig(fake_rec) + log_sig(fake_rand)).mean();
  return out;
}

}  // namespace nn

namespace {

template <typename R>
torch::Tensor as_double(const R& raster) {
  std::vector<double> values(raster.values().begin(), raster.values().end());
  return torch::tensor(values, torch::kFloat64).reshape({1, raster.channels(), raster.height(), raster.width()});
}

template <typename A, typename B>
void require_same(const A& a, const B& b, const char* what) {
  require(a.shape() == b.shape(), std::string(what) + ": shape " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

}  // namespace

void LossWeights::validate() const {
  for (double w : {rec, adv, itn, kl, fcons, frec})
    require(std::isfinite(w) && w >= 0.0, "loss weights must be finite and non-negative");
}

nlohmann::json to_json(const LossWeights& w) {
  return {{"rec", w.rec}, {"adv", w.adv}, {"itn", w.itn}, {"kl", w.kl}, {"fcons", w.fcons}, {"frec", w.frec}};
}

LossWeights loss_weights_from_json(const nlohmann::json& j) {
  LossWeights w;
  w.rec = j.value("rec", w.rec);
  w.adv = j.value("adv", w.adv);
  w.itn = j.value("itn", w.itn);
  w.kl = j.value("kl", w.kl);
  w.fcons = j.value("fcons", w.fcons);
  w.frec = j.value("frec", w.frec);
  w.validate();
  return w;
}

nlohmann::json LossReport::to_json() const {
  return {{"step", step},         {"rec", terms.rec}, {"adv_g", terms.adv_g}, {"adv_d", terms.adv_d},
          {"itn", terms.itn},     {"kl", terms.kl},   {"fcons", terms.fcons}, {"frec", terms.frec},
          {"total", total}};
}

std::string LossReport::to_json_line() const { return to_json().dump(); }

LossReport total_loss(const LossTerms& t, const LossWeights& w, std::int64_t step) {
  LossReport report{step, t, 0.0};
  for (double v : {t.rec, t.adv_g, t.adv_d, t.itn, t.kl, t.fcons, t.frec})
    if (!std::isfinite(v)) throw TrainingAborted("non-finite loss term at step " + std::to_string(step) + ": " + report.to_json_line());
  report.total = w.rec * t.rec + w.adv * t.adv_g + w.itn * t.itn + w.kl * t.kl + w.fcons * t.fcons + w.frec * t.frec;
  return report;
}

double loss_rec(const GrayImage& x_hat, const GrayImage& x) {
  require_same(x_hat, x, "loss_rec");
  return nn::mse(as_double(x_hat), as_double(x)).item<double>();
}

AdversarialTerms loss_adv(const FeatureRaster& real, const FeatureRaster& fake_rec, const FeatureRaster& fake_rand) {
  require_same(real, fake_rec, "loss_adv");
  require_same(real, fake_rand, "loss_adv");
  for (const auto* s : {&real, &fake_rec, &fake_rand})
    for (float v : s->values()) require(v > 0.0f && v < 1.0f, "loss_adv: scores must lie in (0, 1)");
  const auto t = nn::adversarial_from_scores(as_double(real), as_double(fake_rec), as_double(fake_rand));
  return {t.generator.item<double>(), t.discriminator.item<double>()};
}

double loss_itn(const IntensityMap& predicted, const IntensityMap& target) {
  require_same(predicted, target, "loss_itn");
  return nn::mse(as_double(predicted), as_double(target)).item<double>();
}

double loss_kl(const TypeFeatureMap& mu, const TypeFeatureMap& sigma) {
  require_same(mu, sigma, "loss_kl");
  for (float s : sigma.values()) require(s > 0.0f, "loss_kl: sigma must be positive");
  return nn::kl_divergence(as_double(mu), torch::log(as_double(sigma))).item<double>();
}

double loss_fcons(const TypeFeatureMap& type_feature, const LabelMap& labels, const LineMask& line_mask) {
  require(type_feature.shape().same_plane(labels.shape()), "loss_fcons: labels misaligned with features");
  require(type_feature.shape().same_plane(line_mask.shape()), "loss_fcons: line mask misaligned with features");
  std::vector<std::int64_t> ids(labels.grid().values().begin(), labels.grid().values().end());
  std::vector<double> weight(line_mask.values().begin(), line_mask.values().end());
  bool any = false;
  for (auto& v : weight) {
    v = v != 0 ? 1.0 : 0.0;
    any = any || v != 0.0;
  }
  if (!any) {
    log::warn("loss_fcons: line mask excludes every pixel; returning 0");
    return 0.0;
  }
  const auto h = labels.height(), w = labels.width();
  return nn::feature_consistency(as_double(type_feature), torch::tensor(ids, torch::kInt64).reshape({1, h, w}),
                                 torch::tensor(weight, torch::kFloat64).reshape({1, 1, h, w}))
      .item<double>();
}

double loss_frec(const LatentMap& reencoded, const LatentMap& random_latent) {
  reencoded.validate();
  random_latent.validate();
  require_same(reencoded.intensity, random_latent.intensity, "loss_frec");
  auto a = torch::cat({as_double(reencoded.intensity), as_double(reencoded.type_feature)}, 1);
  auto b = torch::cat({as_double(random_latent.intensity), as_double(random_latent.type_feature)}, 1);
  return nn::mse(a, b).item<double>();
}

}  // namespace mangatone
