// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>

#include "mangatone/error.hpp"
#include "mangatone/io.hpp"
#include "mangatone/rescreener.hpp"
#include "mangatone/tonegen.hpp"

using namespace mangatone;
namespace fs = std::filesystem;

namespace {

constexpr int kH = 16, kW = 24;

LatentMap random_latent(std::uint64_t seed, int h = kH, int w = kW) {
  Rng rng(seed);
  LatentMap l{IntensityMap(h, w), make_type_feature(h, w)};
  for (auto& v : l.intensity.values()) v = static_cast<float>(uniform01(rng));
  for (auto& v : l.type_feature.values()) v = static_cast<float>(standard_normal(rng));
  return l;
}

RegionMask rect(int y0, int x0, int y1, int x1, int h = kH, int w = kW) {
  RegionMask m(h, w, 0);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) m(y, x) = 1;
  return m;
}

bool bit_equal(std::span<const float> a, std::span<const float> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

const Model& tiny_model() {
  static const Model model = [] {
    ModelConfig mc;
    mc.base_channels = 4;
    mc.encoder_residual_blocks = 1;
    mc.decoder_levels = 4;
    mc.discriminator_blocks = 2;
    return Model(mc, 12);
  }();
  return model;
}

GrayImage tone_page(int h, int w) {
  ScreentoneSpec dots;
  ScreentoneSpec lines;
  lines.family = ToneFamily::line;
  lines.period_px = 6.0;
  lines.angle_deg = 0.0;
  const auto a = render_screentone(dots, h, w), b = render_screentone(lines, h, w);
  GrayImage page(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) page(y, x) = x < w / 2 ? a(y, x) : b(y, x);
  return page;
}

}  // namespace

TEST_CASE("edits that keep everything change nothing", "[rescreener]") {
  const auto l = random_latent(1);
  const RegionEdit keep{rect(0, 0, kH, kW), {}, {}};
  CHECK(keep.is_noop());
  const auto out = apply_edit(l, keep);
  CHECK(bit_equal(out.intensity.values(), l.intensity.values()));
  CHECK(bit_equal(out.type_feature.values(), l.type_feature.values()));

  const auto unit = apply_edit(l, {rect(0, 0, kH, kW), {}, IntensityAction::scale(1.0)});
  CHECK(bit_equal(unit.intensity.values(), l.intensity.values()));

  const auto half = apply_edit(l, {rect(0, 0, kH, kW), {}, IntensityAction::constant(0.5)});
  for (float v : half.intensity.values()) CHECK(v == 0.5f);
  CHECK(bit_equal(half.type_feature.values(), l.type_feature.values()));
}

TEST_CASE("intensity scaling on a ramp matches the pixelwise oracle", "[rescreener]") {
  LatentMap l{IntensityMap(kH, kW), make_type_feature(kH, kW, 0.3f)};
  for (int y = 0; y < kH; ++y)
    for (int x = 0; x < kW; ++x) l.intensity(y, x) = static_cast<float>(0.1 + 0.7 * x / (kW - 1));
  const auto region = rect(2, 3, 14, 20);
  const auto out = apply_edit(l, {region, {}, IntensityAction::scale(1.2)});
  for (int y = 0; y < kH; ++y)
    for (int x = 0; x < kW; ++x) {
      const float orig = l.intensity(y, x);
      if (region(y, x)) {
        CHECK(out.intensity(y, x) == static_cast<float>(std::clamp(1.2 * orig, 0.0, 1.0)));
      } else {
        CHECK(out.intensity(y, x) == orig);
      }
    }
  CHECK(bit_equal(out.type_feature.values(), l.type_feature.values()));
}

TEST_CASE("edited intensities are clamped", "[rescreener]") {
  const auto l = random_latent(2);
  const auto region = rect(0, 0, 8, 8);
  for (const auto& action : {IntensityAction::offset(0.7), IntensityAction::offset(-0.9), IntensityAction::scale(3.0),
                             IntensityAction::constant(1.5), IntensityAction::constant(-0.5)}) {
    const auto out = apply_edit(l, {region, {}, action});
    for (float v : out.intensity.values()) CHECK((v >= 0.0f && v <= 1.0f));
  }
  const auto up = apply_edit(l, {region, {}, IntensityAction::offset(0.25)});
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x)
      CHECK(up.intensity(y, x) == static_cast<float>(std::min(1.0, static_cast<double>(l.intensity(y, x)) + 0.25)));
}

TEST_CASE("type actions write the region vector", "[rescreener]") {
  const auto l = random_latent(3);
  const auto region = rect(4, 4, 10, 12);

  const auto set = apply_edit(l, {region, TypeAction::set({0.25, -1.5, 2.0}), {}});
  for (std::size_t i = 0; i < region.size(); ++i) {
    if (region[i]) {
      CHECK(set.type_feature.plane(0)[i] == 0.25f);
      CHECK(set.type_feature.plane(1)[i] == -1.5f);
      CHECK(set.type_feature.plane(2)[i] == 2.0f);
    } else {
      for (int c = 0; c < 3; ++c) CHECK(set.type_feature.plane(c)[i] == l.type_feature.plane(c)[i]);
    }
  }
  CHECK(bit_equal(set.intensity.values(), l.intensity.values()));

  const auto donor = rect(12, 0, 16, 6);
  double mean[3] = {0, 0, 0};
  for (std::size_t i = 0; i < donor.size(); ++i)
    if (donor[i])
      for (int c = 0; c < 3; ++c) mean[c] += l.type_feature.plane(c)[i] / 24.0;
  const auto copied = apply_edit(l, {region, TypeAction::copy_from(donor), {}});
  for (std::size_t i = 0; i < region.size(); ++i)
    if (region[i])
      for (int c = 0; c < 3; ++c) CHECK_THAT(copied.type_feature.plane(c)[i], Catch::Matchers::WithinAbs(mean[c], 1e-5));

  CHECK_THROWS_AS(apply_edit(l, {region, TypeAction::copy_from(RegionMask(kH, kW, 0)), {}}), ContractViolation);
  CHECK_THROWS_AS(apply_edit(l, {region, TypeAction::copy_from(rect(0, 0, 2, 2, 8, 8)), {}}), ContractViolation);
  CHECK_THROWS_AS(apply_edit(l, {region, TypeAction::set({NAN, 0.0, 0.0}), {}}), ContractViolation);
}

TEST_CASE("disjoint edits commute", "[rescreener]") {
  const auto l = random_latent(4);
  const RegionEdit e1{rect(0, 0, 8, 12), TypeAction::set({1.0, 0.0, -1.0}), IntensityAction::scale(0.5)};
  const RegionEdit e2{rect(8, 12, 16, 24), TypeAction::copy_from(rect(0, 12, 8, 24)), IntensityAction::offset(0.2)};
  const auto a = apply_edit(apply_edit(l, e1), e2);
  const auto b = apply_edit(apply_edit(l, e2), e1);
  CHECK(bit_equal(a.intensity.values(), b.intensity.values()));
  CHECK(bit_equal(a.type_feature.values(), b.type_feature.values()));
}

TEST_CASE("edit contracts", "[rescreener]") {
  const auto l = random_latent(5);
  CHECK_THROWS_AS(apply_edit(l, {rect(0, 0, 4, 4, 8, 8), {}, IntensityAction::scale(2.0)}), ContractViolation);
  RegionMask bad = rect(0, 0, 4, 4);
  bad[0] = 7;
  CHECK_THROWS_AS(apply_edit(l, {bad, {}, IntensityAction::scale(2.0)}), ContractViolation);
  CHECK_THROWS_AS(apply_edit(l, {rect(0, 0, 4, 4), {}, IntensityAction::offset(INFINITY)}), ContractViolation);

  const auto same = apply_edit(l, {RegionMask(kH, kW, 0), {}, IntensityAction::constant(0.0)});
  CHECK(bit_equal(same.intensity.values(), l.intensity.values()));
}

TEST_CASE("edit records parse from JSON", "[rescreener]") {
  const auto dir = fs::temp_directory_path() / "mangatone_test_rescreener";
  fs::create_directories(dir);
  GrayImage mask_png(kH, kW, 0.0f);
  for (int x = 0; x < 5; ++x) mask_png(1, x) = 1.0f;
  io::save_png(dir / "m.png", mask_png);

  LabelMap::Grid grid(kH, kW, 0);
  for (int y = 8; y < kH; ++y)
    for (int x = 0; x < kW; ++x) grid(y, x) = y < 12 ? 1 : 2;
  const LabelMap labels(grid, 3);
  const auto resolve = make_mask_resolver(dir, &labels);

  const auto edits = region_edits_from_json(nlohmann::json::parse(R"([
    {"region": "m.png", "intensity": {"action": "scale", "value": 1.2}},
    {"region": {"label": 1}, "type": {"action": "set_vector", "vector": [1, 2, 3]}},
    {"region": {"labels": [1, 2]}, "type": {"action": "copy_from_region", "donor": {"label": 0}},
     "intensity": {"action": "set_constant", "value": 0.4}}
  ])"), resolve);
  REQUIRE(edits.size() == 3);
  CHECK(std::count(edits[0].region.values().begin(), edits[0].region.values().end(), 1) == 5);
  CHECK(edits[0].intensity.kind == IntensityAction::Kind::scale);
  CHECK(edits[0].type.kind == TypeAction::Kind::keep);
  CHECK(std::count(edits[1].region.values().begin(), edits[1].region.values().end(), 1) == 4 * kW);
  CHECK(edits[1].type.vector == std::array<double, 3>{1, 2, 3});
  CHECK(std::count(edits[2].region.values().begin(), edits[2].region.values().end(), 1) == 8 * kW);
  CHECK(std::count(edits[2].type.donor.values().begin(), edits[2].type.donor.values().end(), 1) == 8 * kW);

  const auto parse = [&](const char* text) { return region_edit_from_json(nlohmann::json::parse(text), resolve); };
  CHECK_THROWS_AS(parse(R"({"region": {"label": 0}})"), ContractViolation);
  CHECK_THROWS_AS(parse(R"({"region": {"label": 5}, "intensity": {"action": "scale", "value": 2}})"), ContractViolation);
  CHECK_THROWS_AS(parse(R"({"region": {"label": 0}, "intensity": {"action": "blur", "value": 2}})"), ContractViolation);
  CHECK_THROWS_AS(parse(R"({"region": {"label": 0}, "type": {"action": "set_vector", "vector": [1]}})"), ContractViolation);
  CHECK_THROWS_AS(parse(R"({"region": "missing.png", "intensity": {"action": "scale", "value": 2}})"), IoError);
  CHECK_THROWS_AS(make_mask_resolver(dir, nullptr)(nlohmann::json{{"label", 0}}), ContractViolation);
  fs::remove_all(dir);
}

TEST_CASE("type palette", "[rescreener]") {
  const auto& model = tiny_model();
  ScreentoneSpec dot;
  dot.target_intensity = 0.9;
  const auto one = palette_from_exemplars(model, {dot});
  REQUIRE(one.size() == 1);
  auto at_half = dot;
  at_half.target_intensity = 0.5;
  const auto encoded = model.encode(to_gray(render_screentone(at_half, kPaletteSwatch, kPaletteSwatch)));
  for (int c = 0; c < 3; ++c) {
    double mean = 0.0;
    for (float v : encoded.latent.type_feature.plane(c)) mean += v;
    mean /= kPaletteSwatch * kPaletteSwatch;
    CHECK_THAT(one[0].type[c], Catch::Matchers::WithinAbs(mean, 1e-9));
  }
  CHECK(one[0].spec.target_intensity == 0.5);

  Rng r1(7), r2(7);
  const auto p1 = sample_type_palette(model, 4, r1), p2 = sample_type_palette(model, 4, r2);
  REQUIRE(p1.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(p1[i].spec == p2[i].spec);
    CHECK(p1[i].type == p2[i].type);
  }

  std::vector<ScreentoneSpec> pool(3);
  pool[1].family = ToneFamily::line;
  pool[2].family = ToneFamily::grid;
  Rng r3(1);
  const auto from_pool = sample_type_palette(model, 5, r3, &pool);
  REQUIRE(from_pool.size() == 5);
  std::vector<std::string> first;
  for (int i = 0; i < 3; ++i) first.push_back(to_string(from_pool[static_cast<std::size_t>(i)].spec.family));
  std::sort(first.begin(), first.end());
  CHECK(first == std::vector<std::string>{"dot", "grid", "line"});
  CHECK(to_json(from_pool[0]).contains("vector"));
  CHECK_THROWS_AS(sample_type_palette(model, 0, r3), ContractViolation);
}

TEST_CASE("recompose overlays lines by minimum", "[rescreener]") {
  const auto& model = tiny_model();
  const auto page = tone_page(32, 40);
  const auto latent = model.encode(page).latent;
  LineMask mask(32, 40, 1);
  for (int x = 0; x < 40; ++x) mask(10, x) = 0;
  for (int y = 0; y < 32; ++y) mask(y, 20) = 0;
  const auto lines = line_image(mask);
  const auto out = recompose(latent, model, lines);
  const auto decoded = model.decode(latent);
  for (std::size_t i = 0; i < out.size(); ++i) {
    CHECK(out[i] == std::min(decoded[i], lines[i]));
    if (mask[i] == 0) CHECK(out[i] == 0.0f);
  }
  CHECK_THROWS_AS(recompose(latent, model, line_image(LineMask(8, 8, 1))), ContractViolation);
}

TEST_CASE("edit session on an unpadded page", "[rescreener]") {
  const auto& model = tiny_model();
  const int h = 30, w = 44;
  const auto page = tone_page(h, w);
  LineMask mask(h, w, 1);
  for (int y = 0; y < h; ++y) mask(y, w / 2) = 0;
  EditSession session(model, page, mask);

  const auto original_preview = session.preview();
  CHECK(original_preview.height() == h);
  CHECK(original_preview.width() == w);
  for (int y = 0; y < h; ++y) CHECK(original_preview(y, w / 2) == 0.0f);
  CHECK(session.latent().intensity.shape() == IntensityMap(h, w).shape());

  const auto left = rect(0, 0, h, w / 2, h, w);
  const RegionEdit swap{left, TypeAction::copy_from(rect(0, w / 2 + 1, h, w, h, w)), {}};
  const RegionEdit darker{left, {}, IntensityAction::offset(0.3)};
  session.apply(swap);
  session.apply(darker);
  CHECK(session.edits().size() == 2);
  const auto edited = session.latent();
  const auto expected = apply_edit(apply_edit(session.original_latent(), swap), darker);
  CHECK(bit_equal(edited.intensity.values(), expected.intensity.values()));
  CHECK(bit_equal(edited.type_feature.values(), expected.type_feature.values()));
  const auto edited_preview = session.preview();
  CHECK(&session.preview() == &session.preview());

  EditSession replay(model, page, mask);
  replay.apply(swap);
  replay.apply(darker);
  CHECK(bit_equal(replay.preview().values(), edited_preview.values()));

  CHECK(session.undo());
  CHECK(session.undo());
  CHECK_FALSE(session.undo());
  CHECK(bit_equal(session.latent().intensity.values(), session.original_latent().intensity.values()));
  CHECK(bit_equal(session.preview().values(), original_preview.values()));

  Rng rng(3);
  const auto& seg = session.segment(rng);
  CHECK(seg.labels.height() == h);
  CHECK(session.segmentation().has_value());
  CHECK_THROWS_AS(session.apply({RegionMask(8, 8, 1), {}, IntensityAction::scale(2.0)}), ContractViolation);

  const auto stats = region_stats(session.latent(), left);
  CHECK(stats.pixels == static_cast<std::size_t>(h * (w / 2)));
  CHECK(to_json(stats).contains("mean_type"));
}

TEST_CASE("edit session from a stored latent", "[rescreener]") {
  const auto& model = tiny_model();
  const auto page = tone_page(30, 44);
  const LineMask mask(30, 44, 1);
  EditSession encoded(model, page, mask);
  EditSession stored(model, page, mask, encoded.original_latent());
  CHECK(bit_equal(stored.preview().values(), encoded.preview().values()));
  CHECK_THROWS_AS(EditSession(model, page, mask, LatentMap{IntensityMap(8, 8), make_type_feature(8, 8)}), ContractViolation);
}
