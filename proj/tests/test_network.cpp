// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "mangatone/error.hpp"
#include "mangatone/io.hpp"
#include "mangatone/network.hpp"
#include "mangatone/tonegen.hpp"

using namespace mangatone;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.base_channels = 4;
  c.encoder_residual_blocks = 2;
  return c;
}

GrayImage random_page(int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  GrayImage img(h, w);
  for (auto& v : img.values()) v = uniform01(rng) < 0.4 ? 0.0f : 1.0f;
  return img;
}

bool all_finite(std::span<const float> v) {
  return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

}  // namespace

TEST_CASE("encode shapes, bounds and determinism", "[network]") {
  const Model model(ModelConfig::desk(), 1);
  const auto page = random_page(256, 256, 2);
  const auto a = model.encode(page);
  CHECK(a.latent.intensity.shape() == Shape{1, 256, 256});
  CHECK(a.latent.type_feature.shape() == Shape{3, 256, 256});
  CHECK(in_unit_interval(a.latent.intensity.values()));
  for (float s : a.raw.sigma.values()) REQUIRE(s > 0.0f);
  CHECK(a.latent.type_feature == a.raw.mu);
  CHECK(model.encode(page).latent == a.latent);
}

TEST_CASE("stochastic encoding is reproducible under a fixed seed", "[network]") {
  const Model model(tiny_config(), 3);
  const auto page = random_page(32, 32, 4);
  Rng r1(9), r2(9), r3(10);
  const auto a = model.encode(page, true, r1);
  const auto b = model.encode(page, true, r2);
  const auto c = model.encode(page, true, r3);
  CHECK(a.latent == b.latent);
  CHECK_FALSE(a.latent.type_feature == c.latent.type_feature);
  CHECK_FALSE(a.latent.type_feature == a.raw.mu);
}

TEST_CASE("encode rejects sizes that are not a multiple of the downsampling factor", "[network]") {
  const Model model(tiny_config(), 3);
  CHECK_THROWS_AS(model.encode(random_page(30, 32, 1)), ContractViolation);
  const auto padded = pad_to_multiple(random_page(30, 33, 1), model.config().input_multiple());
  CHECK(padded.height() == 32);
  CHECK(padded.width() == 40);
  CHECK_NOTHROW(model.encode(padded));
}

TEST_CASE("decode shapes, range and determinism", "[network]") {
  const Model model(tiny_config(), 5);
  for (auto [h, w] : {std::pair{64, 64}, std::pair{40, 24}, std::pair{8, 72}}) {
    Rng rng(static_cast<std::uint64_t>(h * w));
    LatentMap latent{IntensityMap(h, w), make_type_feature(h, w)};
    for (auto& v : latent.intensity.values()) v = static_cast<float>(uniform01(rng));
    for (auto& v : latent.type_feature.values()) v = static_cast<float>(standard_normal(rng));
    const auto out = model.decode(latent);
    CHECK(out.shape() == Shape{1, h, w});
    CHECK(in_unit_interval(out.values()));
    CHECK(model.decode(latent) == out);
  }
  LatentMap bad{IntensityMap(8, 8), make_type_feature(8, 9)};
  CHECK_THROWS_AS(model.decode(bad), ContractViolation);
}

TEST_CASE("decoder ignores type features where intensity is 0 or 1", "[network][property]") {
  const Model model(tiny_config(), 6);
  Rng rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    LatentMap a{IntensityMap(32, 32), make_type_feature(32, 32)};
    for (auto& v : a.intensity.values()) {
      const double u = uniform01(rng);
      v = u < 0.3 ? 0.0f : (u < 0.6 ? 1.0f : static_cast<float>(uniform01(rng)));
    }
    for (auto& v : a.type_feature.values()) v = static_cast<float>(standard_normal(rng));
    auto b = a;
    for (int c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < a.intensity.size(); ++i)
        if (a.intensity[i] == 0.0f || a.intensity[i] == 1.0f) b.type_feature.plane(c)[i] += 5.0f * static_cast<float>(standard_normal(rng));
    CHECK(model.decode(a) == model.decode(b));
  }
}

TEST_CASE("discriminator output size and range", "[network]") {
  const Model model(tiny_config(), 8);
  const auto page = random_page(64, 96, 9);
  const auto scores = model.discriminate(page);
  CHECK(scores.shape() == Shape{1, 4, 6});
  for (float s : scores.values()) CHECK((s > 0.0f && s < 1.0f));
  CHECK(model.discriminate(page) == scores);
}

TEST_CASE("sample_random_intensity", "[network]") {
  SECTION("values lie in [0, 1] and a fixed seed repeats") {
    LabelMap::Grid g(48, 40);
    for (int y = 0; y < 48; ++y)
      for (int x = 0; x < 40; ++x) g(y, x) = (y < 20 ? 0 : 1) + (x < 15 ? 0 : 2);
    const LabelMap labels(g, 4);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng a(seed), b(seed);
      const auto m = sample_random_intensity(a, &labels, 48, 40);
      CHECK(in_unit_interval(m.values()));
      CHECK(sample_random_intensity(b, &labels, 48, 40) == m);
    }
  }
  SECTION("single region draws are constants or ramps within [0.1, 0.9]") {
    int constants = 0;
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
      Rng rng(seed);
      const auto m = sample_random_intensity(rng, nullptr, 32, 32);
      const auto [lo, hi] = std::minmax_element(m.values().begin(), m.values().end());
      CHECK(*lo >= 0.1f - 1e-6f);
      CHECK(*hi <= 0.9f + 1e-6f);
      if (*lo == *hi) ++constants;
    }
    CHECK(constants > 5);
    CHECK(constants < 35);
  }
}

TEST_CASE("random-intensity path on an untrained model", "[network]") {
  const Model model(ModelConfig::desk(), 10);
  const auto page = random_page(64, 64, 11);
  Rng rng(12), replay(12);
  const auto path = model.random_intensity_path(page, rng);
  CHECK(path.random_latent.intensity.shape() == Shape{1, 64, 64});
  CHECK(path.random_latent.type_feature.shape() == Shape{3, 64, 64});
  CHECK(path.reencoded.type_feature.shape() == Shape{3, 64, 64});
  CHECK(path.random_latent.intensity == sample_random_intensity(replay, nullptr, 64, 64));
  CHECK(path.random_latent.type_feature == model.encode(page).latent.type_feature);
  CHECK(all_finite(path.random_image.values()));
  CHECK(all_finite(path.reencoded.intensity.values()));
  CHECK(all_finite(path.reencoded.type_feature.values()));
}

TEST_CASE("forward passes stay finite on arbitrary unit-interval inputs", "[network][property]") {
  Rng rng(13);
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const Model model(tiny_config(), seed);
    GrayImage page(32, 32);
    for (auto& v : page.values()) v = static_cast<float>(uniform01(rng));
    const auto enc = model.encode(page, true, rng);
    CHECK(all_finite(enc.latent.type_feature.values()));
    CHECK(all_finite(model.decode(enc.latent).values()));
    CHECK(all_finite(model.discriminate(page).values()));
  }
}

TEST_CASE("model parameters round trip bit-exactly", "[network][io]") {
  const Model model(tiny_config(), 14);
  const auto dir = std::filesystem::temp_directory_path() / "mangatone_test_network";
  std::filesystem::create_directories(dir);
  save_model(dir / "m.ckpt", model);
  const auto loaded = load_model(dir / "m.ckpt");
  CHECK(loaded.config() == model.config());
  const auto a = export_model(model), b = export_model(loaded);
  CHECK(a.tensors == b.tensors);
  const auto page = random_page(32, 32, 15);
  CHECK(loaded.decode(loaded.encode(page).latent) == model.decode(model.encode(page).latent));

  auto file = export_model(model);
  file.tensors.begin()->second.shape.push_back(1);
  CHECK_THROWS_AS(import_model(file), IoError);
  file = export_model(model);
  file.tensors.erase(file.tensors.begin());
  CHECK_THROWS_AS(import_model(file), IoError);
  io::write_bytes(dir / "junk.ckpt", std::string("not a checkpoint"));
  CHECK_THROWS_AS(load_model(dir / "junk.ckpt"), IoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("clone is independent of the source", "[network]") {
  const Model model(tiny_config(), 16);
  const auto copy = model.clone();
  CHECK(export_model(copy).tensors == export_model(model).tensors);
  CHECK(&copy.impl() != &model.impl());
}
