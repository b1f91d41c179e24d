// SPDX-License-Identifier: Apache-2.0
#include "mangatone/rescreener.hpp"

#include <algorithm>
#include <cmath>

#include "mangatone/error.hpp"
#include "mangatone/imgproc.hpp"
#include "mangatone/io.hpp"
#include "mangatone/log.hpp"

namespace mangatone {

namespace {

bool is_binary(const RegionMask& mask) {
  return std::all_of(mask.values().begin(), mask.values().end(), [](std::uint8_t v) { return v <= 1; });
}

std::size_t count_selected(const RegionMask& mask) {
  return static_cast<std::size_t>(std::count(mask.values().begin(), mask.values().end(), std::uint8_t{1}));
}

RegionMask pad_mask(const RegionMask& mask, int height, int width) {
  if (mask.height() == height && mask.width() == width) return mask;
  RegionMask out(height, width, 0);
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x) out(y, x) = mask(y, x);
  return out;
}

template <class R>
R crop(const R& raster, int height, int width) {
  if (raster.height() == height && raster.width() == width) return raster;
  R out(Shape{raster.channels(), height, width});
  for (int c = 0; c < raster.channels(); ++c) {
    const auto src = raster.plane(c);
    auto dst = out.plane(c);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        dst[static_cast<std::size_t>(y) * width + x] = src[static_cast<std::size_t>(y) * raster.width() + x];
  }
  return out;
}

template <class R>
R mirror_pad(const R& raster, int height, int width) {
  if (raster.height() == height && raster.width() == width) return raster;
  R out(Shape{raster.channels(), height, width});
  for (int c = 0; c < raster.channels(); ++c) {
    const auto src = raster.plane(c);
    auto dst = out.plane(c);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        dst[static_cast<std::size_t>(y) * width + x] =
            src[static_cast<std::size_t>(imgproc::reflect(y, raster.height())) * raster.width() +
                imgproc::reflect(x, raster.width())];
  }
  return out;
}

LatentMap crop_latent(const LatentMap& latent, int height, int width) {
  return {crop(latent.intensity, height, width), crop(latent.type_feature, height, width)};
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

TypeAction::Kind parse_type_kind(const std::string& s) {
  if (s == "keep") return TypeAction::Kind::keep;
  if (s == "set_vector") return TypeAction::Kind::set_vector;
  if (s == "copy_from_region") return TypeAction::Kind::copy_from_region;
  throw ContractViolation("unknown type action '" + s + "'");
}

IntensityAction::Kind parse_intensity_kind(const std::string& s) {
  if (s == "keep") return IntensityAction::Kind::keep;
  if (s == "set_constant") return IntensityAction::Kind::set_constant;
  if (s == "scale") return IntensityAction::Kind::scale;
  if (s == "offset") return IntensityAction::Kind::offset;
  throw ContractViolation("unknown intensity action '" + s + "'");
}

ScreentoneSpec random_exemplar(Rng& rng) {
  static constexpr std::array families{ToneFamily::dot, ToneFamily::line, ToneFamily::grid, ToneFamily::cross_hatch,
                                       ToneFamily::noise};
  ScreentoneSpec s;
  s.family = families[uniform_index(rng, families.size())];
  s.period_px = uniform(rng, 4.0, 12.0);
  s.angle_deg = uniform(rng, 0.0, 180.0);
  s.phase_x = uniform01(rng);
  s.phase_y = uniform01(rng);
  s.inverted = uniform01(rng) < 0.5;
  s.seed = rng();
  return s;
}

}  // namespace

void RegionEdit::validate() const {
  require(is_binary(region), "edit region must be a 0/1 mask");
  if (type.kind == TypeAction::Kind::set_vector)
    for (double v : type.vector) require(std::isfinite(v), "type vector must be finite");
  if (type.kind == TypeAction::Kind::copy_from_region) {
    require(is_binary(type.donor), "donor region must be a 0/1 mask");
    require(type.donor.shape().same_plane(region.shape()), "donor and edit regions differ in size");
    require(count_selected(type.donor) > 0, "donor region is empty");
  }
  if (intensity.kind != IntensityAction::Kind::keep)
    require(std::isfinite(intensity.value), "intensity value must be finite");
}

LatentMap apply_edit(const LatentMap& latent, const RegionEdit& edit) {
  latent.validate();
  edit.validate();
  require(edit.region.shape().same_plane(latent.intensity.shape()), "edit region does not match the latent size");
  LatentMap out = latent;
  if (edit.is_noop()) return out;
  if (count_selected(edit.region) == 0) {
    log::warn("edit region is empty; nothing changed");
    return out;
  }
  const auto n = edit.region.size();

  if (edit.type.kind != TypeAction::Kind::keep) {
    std::array<double, 3> v = edit.type.vector;
    if (edit.type.kind == TypeAction::Kind::copy_from_region) {
      v = {0.0, 0.0, 0.0};
      double count = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (edit.type.donor[i] == 0) continue;
        for (int c = 0; c < 3; ++c) v[static_cast<std::size_t>(c)] += latent.type_feature.plane(c)[i];
        count += 1.0;
      }
      for (auto& x : v) x /= count;
    }
    for (int c = 0; c < 3; ++c) {
      auto dst = out.type_feature.plane(c);
      const auto value = static_cast<float>(v[static_cast<std::size_t>(c)]);
      for (std::size_t i = 0; i < n; ++i)
        if (edit.region[i] != 0) dst[i] = value;
    }
  }

  if (edit.intensity.kind != IntensityAction::Kind::keep) {
    const double a = edit.intensity.value;
    for (std::size_t i = 0; i < n; ++i) {
      if (edit.region[i] == 0) continue;
      const double x = out.intensity[i];
      double y = x;
      switch (edit.intensity.kind) {
        case IntensityAction::Kind::set_constant: y = a; break;
        case IntensityAction::Kind::scale: y = a * x; break;
        case IntensityAction::Kind::offset: y = x + a; break;
        case IntensityAction::Kind::keep: break;
      }
      out.intensity[i] = static_cast<float>(clamp01(y));
    }
  }
  return out;
}

MaskResolver make_mask_resolver(const std::filesystem::path& base_dir, const LabelMap* labels) {
  return [base_dir, labels](const nlohmann::json& ref) -> RegionMask {
    if (ref.is_string()) {
      const auto img = io::load_png(base_dir / ref.get<std::string>());
      RegionMask mask(img.height(), img.width(), 0);
      for (std::size_t i = 0; i < img.size(); ++i) mask[i] = img[i] >= 0.5f ? 1 : 0;
      return mask;
    }
    require(ref.is_object() && (ref.contains("label") || ref.contains("labels")),
            "mask reference must be a PNG path or {\"label\": n}");
    require(labels != nullptr, "label mask references need a segmentation");
    std::vector<int> wanted;
    if (ref.contains("label")) wanted.push_back(ref.at("label").get<int>());
    if (ref.contains("labels"))
      for (const auto& l : ref.at("labels")) wanted.push_back(l.get<int>());
    RegionMask mask(labels->height(), labels->width(), 0);
    for (int l : wanted) {
      require(l >= 0 && l < labels->num_labels(), "label " + std::to_string(l) + " is not in the segmentation");
      for (std::size_t i = 0; i < mask.size(); ++i)
        if (labels->grid()[i] == l) mask[i] = 1;
    }
    return mask;
  };
}

RegionEdit region_edit_from_json(const nlohmann::json& j, const MaskResolver& resolve) {
  require(j.is_object() && j.contains("region"), "edit needs a region");
  RegionEdit e;
  e.region = resolve(j.at("region"));
  if (j.contains("type")) {
    const auto& t = j.at("type");
    e.type.kind = parse_type_kind(t.value("action", "keep"));
    if (e.type.kind == TypeAction::Kind::set_vector) {
      const auto v = t.at("vector").get<std::vector<double>>();
      require(v.size() == 3, "type vector needs three entries");
      e.type.vector = {v[0], v[1], v[2]};
    } else if (e.type.kind == TypeAction::Kind::copy_from_region) {
      e.type.donor = resolve(t.at("donor"));
    }
  }
  if (j.contains("intensity")) {
    const auto& t = j.at("intensity");
    e.intensity.kind = parse_intensity_kind(t.value("action", "keep"));
    if (e.intensity.kind != IntensityAction::Kind::keep) e.intensity.value = t.at("value").get<double>();
  }
  require(!e.is_noop(), "edit changes nothing: both actions are keep");
  e.validate();
  return e;
}

std::vector<RegionEdit> region_edits_from_json(const nlohmann::json& j, const MaskResolver& resolve) {
  require(j.is_array(), "edits must be a JSON array");
  std::vector<RegionEdit> out;
  for (const auto& e : j) out.push_back(region_edit_from_json(e, resolve));
  return out;
}

std::vector<PaletteEntry> palette_from_exemplars(const Model& model, const std::vector<ScreentoneSpec>& specs) {
  std::vector<PaletteEntry> out;
  for (auto spec : specs) {
    spec.target_intensity = 0.5;
    const auto swatch = to_gray(render_screentone(spec, kPaletteSwatch, kPaletteSwatch));
    const auto encoded = model.encode(swatch);
    Vec3 mean = Vec3::Zero();
    for (int c = 0; c < 3; ++c) {
      double s = 0.0;
      for (float v : encoded.latent.type_feature.plane(c)) s += v;
      mean[c] = s / static_cast<double>(swatch.size());
    }
    out.push_back({spec, mean});
  }
  return out;
}

std::vector<PaletteEntry> sample_type_palette(const Model& model, int n, Rng& rng,
                                              const std::vector<ScreentoneSpec>* pool) {
  require(n >= 1, "palette size must be positive");
  std::vector<ScreentoneSpec> specs;
  if (pool != nullptr && !pool->empty()) {
    std::vector<std::size_t> order;
    while (specs.size() < static_cast<std::size_t>(n)) {
      if (order.empty()) {
        order.resize(pool->size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
      }
      specs.push_back((*pool)[order.back()]);
      order.pop_back();
    }
  } else {
    for (int i = 0; i < n; ++i) specs.push_back(random_exemplar(rng));
  }
  return palette_from_exemplars(model, specs);
}

nlohmann::json to_json(const PaletteEntry& entry) {
  return {{"family", to_string(entry.spec.family)},
          {"type_key", type_key(entry.spec)},
          {"period_px", entry.spec.period_px},
          {"angle_deg", entry.spec.angle_deg},
          {"inverted", entry.spec.inverted},
          {"vector", {entry.type[0], entry.type[1], entry.type[2]}}};
}

BitonalImage line_image(const LineMask& line_mask) {
  BitonalImage out(line_mask.height(), line_mask.width());
  for (std::size_t i = 0; i < line_mask.size(); ++i) out[i] = line_mask[i] != 0 ? 1.0f : 0.0f;
  return out;
}

LatentMap encode_page(const Model& model, const GrayImage& page) {
  require(page.channels() == 1 && page.size() > 0, "encode_page needs a grayscale page");
  const auto padded = pad_to_multiple(page, model.config().input_multiple());
  return crop_latent(model.encode(padded).latent, page.height(), page.width());
}

GrayImage decode_page(const Model& model, const LatentMap& latent) {
  latent.validate();
  const int m = model.config().input_multiple();
  const int h = latent.intensity.height(), w = latent.intensity.width();
  const int ph = (h + m - 1) / m * m, pw = (w + m - 1) / m * m;
  const LatentMap padded{mirror_pad(latent.intensity, ph, pw), mirror_pad(latent.type_feature, ph, pw)};
  return crop(model.decode(padded), h, w);
}

GrayImage recompose(const LatentMap& latent, const Model& model, const BitonalImage& lines) {
  require(lines.shape().same_plane(latent.intensity.shape()), "recompose: line image does not match the latent");
  auto out = model.decode(latent);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(out[i], lines[i]);
  return out;
}

RegionStats region_stats(const LatentMap& latent, const RegionMask& region) {
  require(region.shape().same_plane(latent.intensity.shape()), "region_stats: region does not match the latent");
  RegionStats s;
  for (std::size_t i = 0; i < region.size(); ++i) {
    if (region[i] == 0) continue;
    ++s.pixels;
    s.mean_intensity += latent.intensity[i];
    for (int c = 0; c < 3; ++c) s.mean_type[c] += latent.type_feature.plane(c)[i];
  }
  if (s.pixels > 0) {
    s.mean_intensity /= static_cast<double>(s.pixels);
    s.mean_type /= static_cast<double>(s.pixels);
  }
  return s;
}

nlohmann::json to_json(const RegionStats& stats) {
  return {{"pixels", stats.pixels},
          {"mean_intensity", stats.mean_intensity},
          {"mean_type", {stats.mean_type[0], stats.mean_type[1], stats.mean_type[2]}}};
}

EditSession::EditSession(Model model, GrayImage source, LineMask line_mask)
    : model_(std::move(model)), source_(std::move(source)), line_mask_(std::move(line_mask)) {
  require(source_.channels() == 1 && source_.size() > 0, "edit session needs a grayscale page");
  init(encode_page(model_, source_));
}

EditSession::EditSession(Model model, GrayImage source, LineMask line_mask, const LatentMap& latent)
    : model_(std::move(model)), source_(std::move(source)), line_mask_(std::move(line_mask)) {
  require(source_.channels() == 1 && source_.size() > 0, "edit session needs a grayscale page");
  init(latent);
}

void EditSession::init(const LatentMap& latent) {
  require(line_mask_.shape().same_plane(source_.shape()), "line mask does not match the page");
  require(latent.intensity.shape().same_plane(source_.shape()), "latent does not match the page");
  latent.validate();
  const int m = model_.config().input_multiple();
  const int ph = (height() + m - 1) / m * m, pw = (width() + m - 1) / m * m;
  base_ = {mirror_pad(latent.intensity, ph, pw), mirror_pad(latent.type_feature, ph, pw)};
  current_ = base_;
  padded_lines_ = BitonalImage(ph, pw, 1.0f);
  for (int y = 0; y < height(); ++y)
    for (int x = 0; x < width(); ++x) padded_lines_(y, x) = line_mask_(y, x) != 0 ? 1.0f : 0.0f;
}

LatentMap EditSession::original_latent() const { return crop_latent(base_, height(), width()); }
LatentMap EditSession::latent() const { return crop_latent(current_, height(), width()); }

const SegmentationResult& EditSession::segment(Rng& rng, const SegmentOptions& options) {
  segmentation_ = segment_page(original_latent(), line_mask_, rng, options);
  return *segmentation_;
}

RegionEdit EditSession::pad_edit(const RegionEdit& edit) const {
  require(edit.region.height() == height() && edit.region.width() == width(), "edit region does not match the page");
  RegionEdit e = edit;
  const int h = current_.intensity.height(), w = current_.intensity.width();
  e.region = pad_mask(edit.region, h, w);
  if (e.type.kind == TypeAction::Kind::copy_from_region) e.type.donor = pad_mask(edit.type.donor, h, w);
  return e;
}

void EditSession::apply(const RegionEdit& edit) {
  current_ = apply_edit(current_, pad_edit(edit));
  edits_.push_back(edit);
  preview_.reset();
}

bool EditSession::undo() {
  if (edits_.empty()) return false;
  edits_.pop_back();
  rebuild();
  return true;
}

void EditSession::rebuild() {
  current_ = base_;
  for (const auto& e : edits_) current_ = apply_edit(current_, pad_edit(e));
  preview_.reset();
}

const GrayImage& EditSession::preview() {
  if (!preview_) preview_ = crop(recompose(current_, model_, padded_lines_), height(), width());
  return *preview_;
}

}  // namespace mangatone
