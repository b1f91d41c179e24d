// SPDX-License-Identifier: Apache-2.0
#include <torch/torch.h>
// c10 defines a glog-style CHECK that would shadow the test macro.
#undef CHECK
#include <catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <map>
#include <numeric>

#include "mangatone/error.hpp"
#include "mangatone/losses.hpp"
#include "mangatone/nn/losses.hpp"
#include "mangatone/nn/modules.hpp"
#include "mangatone/random.hpp"

#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace mangatone;
using Catch::Approx;

using oracle::gradient_error;
using oracle::rand64;
using oracle::random_labels;
using oracle::random_line_mask;
using oracle::random_raster;
using oracle::random_type;

TEST_CASE("loss_kl closed forms", "[losses]") {
  auto kl = [](float mu, float sigma) {
    return loss_kl(make_type_feature(4, 4, mu), make_type_feature(4, 4, sigma));
  };
  CHECK(kl(0.0f, 1.0f) == Approx(0.0).margin(1e-12));
  CHECK(kl(1.0f, 1.0f) == Approx(0.5).margin(1e-12));
  CHECK(kl(0.0f, 2.0f) == Approx(0.80685).margin(1e-5));
  CHECK(kl(0.0f, 2.0f) == Approx(0.5 * (4.0 - std::log(4.0) - 1.0)).margin(1e-9));
  CHECK_THROWS_AS(kl(0.0f, 0.0f), ContractViolation);
  CHECK_THROWS_AS(kl(0.0f, -1.0f), ContractViolation);
}

TEST_CASE("squared-error losses closed forms", "[losses]") {
  const GrayImage x(8, 8, 0.25f);
  CHECK(loss_rec(x, x) == 0.0);
  CHECK(loss_rec(GrayImage(8, 8, 0.75f), x) == Approx(0.25).margin(1e-12));
  CHECK_THROWS_AS(loss_rec(GrayImage(8, 7), x), ContractViolation);

  const IntensityMap a(8, 8, 0.3f);
  CHECK(loss_itn(a, a) == 0.0);
  CHECK(loss_itn(IntensityMap(8, 8, 0.4f), a) == Approx(0.01).margin(1e-7));
  CHECK_THROWS_AS(loss_itn(IntensityMap(7, 8), a), ContractViolation);

  Rng rng(1);
  const LatentMap l{IntensityMap(8, 8, 0.3f), random_type(8, 8, rng)};
  CHECK(loss_frec(l, l) == 0.0);
  auto shifted = l;
  for (auto& v : shifted.intensity.values()) v += 0.2f;
  CHECK(loss_frec(shifted, l) == Approx(0.01).margin(1e-7));
  const LatentMap small{IntensityMap(8, 7), make_type_feature(8, 7)};
  CHECK_THROWS_AS(loss_frec(small, l), ContractViolation);
}

TEST_CASE("adversarial terms", "[losses]") {
  const FeatureRaster half(Shape{1, 4, 4}, 0.5f);
  const auto t = loss_adv(half, half, half);
  CHECK(t.discriminator == Approx(3.0 * std::log(2.0)).margin(1e-9));
  CHECK(t.discriminator == Approx(2.0794).margin(1e-4));
  CHECK(t.generator == Approx(2.0 * std::log(2.0)).margin(1e-9));

  const FeatureRaster near_one(Shape{1, 4, 4}, 1.0f - 1e-7f), near_zero(Shape{1, 4, 4}, 1e-7f);
  CHECK(loss_adv(near_one, near_zero, near_zero).discriminator < 1e-5);

  double previous = std::numeric_limits<double>::infinity();
  for (int i = 1; i < 100; ++i) {
    const FeatureRaster fake(Shape{1, 4, 4}, static_cast<float>(i) / 100.0f);
    const double g = loss_adv(half, fake, fake).generator;
    CHECK(g < previous);
    CHECK(g >= 0.0);
    previous = g;
  }
  for (float bad : {0.0f, 1.0f, -0.5f, 1.5f}) {
    const FeatureRaster s(Shape{1, 4, 4}, bad);
    CHECK_THROWS_AS(loss_adv(s, half, half), ContractViolation);
    CHECK_THROWS_AS(loss_adv(half, s, half), ContractViolation);
  }
}

TEST_CASE("adversarial logits form matches the scores form", "[losses]") {
  torch::manual_seed(0);
  const auto lr = torch::randn({2, 1, 3, 3}, torch::kFloat64) * 3, lf = torch::randn_like(lr) * 3,
             lq = torch::randn_like(lr) * 3;
  const auto a = nn::adversarial_from_logits(lr, lf, lq);
  const auto b = nn::adversarial_from_scores(torch::sigmoid(lr), torch::sigmoid(lf), torch::sigmoid(lq));
  CHECK(a.discriminator.item<double>() == Approx(b.discriminator.item<double>()).epsilon(1e-9));
  CHECK(a.generator.item<double>() == Approx(b.generator.item<double>()).epsilon(1e-9));
}

TEST_CASE("feature consistency", "[losses]") {
  Rng rng(2);
  const auto labels = random_labels(8, 8, 4, rng);
  SECTION("per-region constant features cost nothing") {
    auto f = make_type_feature(8, 8);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) f(c, y, x) = static_cast<float>(labels(y, x) * (c + 1)) - 2.5f;
    CHECK(loss_fcons(f, labels, random_line_mask(8, 8, rng)) == Approx(0.0).margin(1e-12));
  }
  SECTION("an all-line mask gives zero") {
    CHECK(loss_fcons(random_type(8, 8, rng), labels, LineMask(8, 8, 0)) == 0.0);
  }
  SECTION("misaligned inputs are rejected") {
    CHECK_THROWS_AS(loss_fcons(random_type(8, 7, rng), labels, LineMask(8, 8, 1)), ContractViolation);
    CHECK_THROWS_AS(loss_fcons(random_type(8, 8, rng), labels, LineMask(8, 7, 1)), ContractViolation);
  }
  SECTION("invariant to permuting label ids") {
    const auto f = random_type(8, 8, rng);
    const auto mask = random_line_mask(8, 8, rng);
    LabelMap::Grid g(8, 8);
    const std::array<int, 4> perm{2, 0, 3, 1};
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) g(y, x) = perm[static_cast<std::size_t>(labels(y, x))];
    CHECK(loss_fcons(f, LabelMap(g, 4), mask) == Approx(loss_fcons(f, labels, mask)).epsilon(1e-12));
  }
}

TEST_CASE("all losses agree with loop oracles on random 8x8 instances", "[losses][oracle]") {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const auto x = random_raster<GrayImage>(Shape{1, 8, 8}, rng);
    const auto y = random_raster<GrayImage>(Shape{1, 8, 8}, rng);
    CHECK(loss_rec(x, y) == Approx(oracle::mse(x, y)).margin(1e-6));

    const auto p = random_raster<IntensityMap>(Shape{1, 8, 8}, rng);
    const auto q = random_raster<IntensityMap>(Shape{1, 8, 8}, rng);
    CHECK(loss_itn(p, q) == Approx(oracle::mse(p, q)).margin(1e-6));

    const auto mu = random_type(8, 8, rng);
    const auto sigma = random_raster<TypeFeatureMap>(Shape{3, 8, 8}, rng, 0.05, 3.0);
    CHECK(loss_kl(mu, sigma) == Approx(oracle::kl(mu, sigma)).margin(1e-6));

    const auto sr = random_raster<FeatureRaster>(Shape{1, 8, 8}, rng, 0.01, 0.99);
    const auto sf = random_raster<FeatureRaster>(Shape{1, 8, 8}, rng, 0.01, 0.99);
    const auto sq = random_raster<FeatureRaster>(Shape{1, 8, 8}, rng, 0.01, 0.99);
    const auto adv = loss_adv(sr, sf, sq);
    const auto expected = oracle::adversarial(sr, sf, sq);
    CHECK(adv.discriminator == Approx(expected.discriminator).margin(1e-6));
    CHECK(adv.generator == Approx(expected.generator).margin(1e-6));

    const auto labels = random_labels(8, 8, 1 + trial % 5, rng);
    const auto mask = random_line_mask(8, 8, rng);
    CHECK(loss_fcons(mu, labels, mask) == Approx(oracle::fcons(mu, labels, mask)).margin(1e-6));

    const LatentMap a{p, mu}, b{q, random_type(8, 8, rng)};
    CHECK(loss_frec(a, b) == Approx(oracle::frec(a, b)).margin(1e-6));
  }
}

TEST_CASE("squared-error losses are quadratically homogeneous", "[losses][property]") {
  Rng rng(4);
  for (float alpha : {0.5f, 2.0f, 4.0f}) {
    const auto x = random_raster<GrayImage>(Shape{1, 8, 8}, rng);
    const auto y = random_raster<GrayImage>(Shape{1, 8, 8}, rng);
    auto xs = x, ys = y;
    for (auto& v : xs.values()) v *= alpha;
    for (auto& v : ys.values()) v *= alpha;
    CHECK(loss_rec(xs, ys) == Approx(alpha * alpha * loss_rec(x, y)).epsilon(1e-12));

    const auto p = retag<IntensityMap>(x), q = retag<IntensityMap>(y);
    CHECK(loss_itn(retag<IntensityMap>(xs), retag<IntensityMap>(ys)) == Approx(alpha * alpha * loss_itn(p, q)).epsilon(1e-12));

    LatentMap a{p, random_type(8, 8, rng)}, b{q, random_type(8, 8, rng)};
    const double base = loss_frec(a, b);
    for (auto* m : {&a, &b}) {
      for (auto& v : m->intensity.values()) v *= alpha;
      for (auto& v : m->type_feature.values()) v *= alpha;
    }
    CHECK(loss_frec(a, b) == Approx(alpha * alpha * base).epsilon(1e-12));
  }
}

TEST_CASE("weighted total", "[losses]") {
  const LossWeights w;
  CHECK(total_loss(LossTerms{}, w).total == 0.0);
  const LossTerms unit{1, 1, 1, 1, 1, 1, 1};
  const auto report = total_loss(unit, w, 7);
  CHECK(report.total == Approx(38.0).epsilon(1e-12));
  CHECK(report.step == 7);
  CHECK(total_loss(unit, LossWeights{0, 0, 0, 0, 0, 0}).total == 0.0);

  const LossTerms t{0.3, 1.7, 2.2, 0.05, 0.4, 0.01, 0.2};
  const double expected = 10 * 0.3 + 1.7 + 5 * 0.05 + 0.4 + 20 * 0.01 + 0.2;
  CHECK(total_loss(t, w).total == Approx(expected).epsilon(1e-6));

  auto bad = unit;
  bad.kl = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(total_loss(bad, w), TrainingAborted);
  bad = unit;
  bad.adv_d = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(total_loss(bad, w), TrainingAborted);

  const auto j = nlohmann::json::parse(report.to_json_line());
  for (const char* key : {"step", "rec", "adv_g", "adv_d", "itn", "kl", "fcons", "frec", "total"}) CHECK(j.contains(key));
  CHECK(j["total"].get<double>() == Approx(38.0));

  LossWeights negative;
  negative.fcons = -1.0;
  CHECK_THROWS_AS(negative.validate(), ContractViolation);
  const auto round = loss_weights_from_json(to_json(LossWeights{1, 2, 3, 4, 5, 6}));
  CHECK(round.frec == 6.0);
  CHECK(round.rec == 1.0);
}

TEST_CASE("loss gradients match central differences", "[losses][gradient]") {
  torch::manual_seed(5);
  const double tol = 1e-3;
  const auto target = rand64({1, 1, 4, 4});
  CHECK(gradient_error([&](const torch::Tensor& x) { return nn::mse(x, target); }, rand64({1, 1, 4, 4})) < tol);

  const auto latent_target = rand64({1, 4, 4, 4}, -1, 1);
  CHECK(gradient_error([&](const torch::Tensor& x) { return nn::mse(x, latent_target); }, rand64({1, 4, 4, 4}, -1, 1)) < tol);

  const auto log_sigma = rand64({1, 3, 4, 4}, -1, 1);
  const auto mu = rand64({1, 3, 4, 4}, -2, 2);
  CHECK(gradient_error([&](const torch::Tensor& m) { return nn::kl_divergence(m, log_sigma); }, mu) < tol);
  CHECK(gradient_error([&](const torch::Tensor& ls) { return nn::kl_divergence(mu, ls); }, log_sigma) < tol);

  const auto labels = torch::randint(0, 3, {1, 4, 4}, torch::kInt64);
  const auto weight = (torch::rand({1, 1, 4, 4}, torch::kFloat64) < 0.7).to(torch::kFloat64);
  CHECK(gradient_error([&](const torch::Tensor& f) { return nn::feature_consistency(f, labels, weight); }, mu) < tol);

  const auto s1 = rand64({1, 1, 4, 4}, 0.05, 0.95), s2 = rand64({1, 1, 4, 4}, 0.05, 0.95),
             s3 = rand64({1, 1, 4, 4}, 0.05, 0.95);
  for (int which = 0; which < 3; ++which) {
    auto args = [&](const torch::Tensor& s) {
      return std::array<torch::Tensor, 3>{which == 0 ? s : s1, which == 1 ? s : s2, which == 2 ? s : s3};
    };
    const auto start = which == 0 ? s1 : (which == 1 ? s2 : s3);
    CHECK(gradient_error([&](const torch::Tensor& s) {
            const auto a = args(s);
            return nn::adversarial_from_scores(a[0], a[1], a[2]).discriminator;
          }, start) < tol);
    if (which > 0)
      CHECK(gradient_error([&](const torch::Tensor& s) {
              const auto a = args(s);
              return nn::adversarial_from_scores(a[0], a[1], a[2]).generator;
            }, start) < tol);
    CHECK(gradient_error([&](const torch::Tensor& s) {
            const auto a = args(s);
            return nn::adversarial_from_logits(a[0], a[1], a[2]).discriminator;
          }, (start - 0.5) * 6) < tol);
  }
}

TEST_CASE("miniature encoder/decoder gradients match central differences", "[losses][gradient]") {
  ModelConfig mini;
  mini.base_channels = 2;
  mini.encoder_levels = 2;
  mini.encoder_residual_blocks = 1;
  mini.decoder_levels = 2;
  mini.intensity_level = 1;
  mini.validate();

  nn::Encoder encoder(mini);
  nn::Decoder decoder(mini);
  nn::initialize_parameters(*encoder, 17);
  nn::initialize_parameters(*decoder, 18);
  encoder->to(torch::kFloat64);
  decoder->to(torch::kFloat64);

  torch::manual_seed(6);
  const auto image = rand64({1, 1, 8, 8});
  const auto w_itn = torch::randn({1, 1, 8, 8}, torch::kFloat64);
  const auto w_mu = torch::randn({1, 3, 8, 8}, torch::kFloat64);
  const auto w_sig = torch::randn({1, 3, 8, 8}, torch::kFloat64);
  const auto w_out = torch::randn({1, 1, 8, 8}, torch::kFloat64);

  auto encoder_objective = [&](const torch::Tensor& x) {
    const auto e = encoder->forward(x);
    return (e.intensity * w_itn).sum() + (e.mu * w_mu).sum() + (e.log_sigma * w_sig).sum();
  };
  CHECK(gradient_error(encoder_objective, image) < 1e-3);

  const auto intensity = rand64({1, 1, 8, 8}, 0.1, 0.9);
  const auto type = torch::randn({1, 3, 8, 8}, torch::kFloat64);
  CHECK(gradient_error([&](const torch::Tensor& t) { return (decoder->forward(intensity, t) * w_out).sum(); }, type) < 1e-3);
  CHECK(gradient_error([&](const torch::Tensor& i) { return (decoder->forward(i, type) * w_out).sum(); }, intensity) < 1e-3);

  CHECK(oracle::parameter_gradient_error(*encoder, [&] { return encoder_objective(image); }) < 1e-3);
  CHECK(oracle::parameter_gradient_error(*decoder, [&] { return (decoder->forward(intensity, type) * w_out).sum(); }) <
        1e-3);
}
