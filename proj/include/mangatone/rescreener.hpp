// SPDX-License-Identifier: Apache-2.0
//
// Latent-space editing: swap the screentone type of a region while keeping
// its intensity, or change the intensity while keeping the type, then decode
// and lay the structural lines back on top.
#pragma once

#include <array>
#include <functional>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "mangatone/network.hpp"
#include "mangatone/random.hpp"
#include "mangatone/raster.hpp"
#include "mangatone/segmenter.hpp"
#include "mangatone/tonegen.hpp"

namespace mangatone {

struct TypeAction {
  enum class Kind { keep, set_vector, copy_from_region };
  Kind kind = Kind::keep;
  std::array<double, 3> vector{};  // set_vector
  RegionMask donor;                // copy_from_region: its mean type vector is written

  static TypeAction set(const std::array<double, 3>& v) { return {Kind::set_vector, v, {}}; }
  static TypeAction copy_from(RegionMask donor) { return {Kind::copy_from_region, {}, std::move(donor)}; }
};

struct IntensityAction {
  enum class Kind { keep, set_constant, scale, offset };
  Kind kind = Kind::keep;
  double value = 0.0;

  static IntensityAction constant(double v) { return {Kind::set_constant, v}; }
  static IntensityAction scale(double alpha) { return {Kind::scale, alpha}; }
  static IntensityAction offset(double delta) { return {Kind::offset, delta}; }
};

struct RegionEdit {
  RegionMask region;
  TypeAction type;
  IntensityAction intensity;

  /// Both actions keep: applying the edit changes nothing.
  bool is_noop() const {
    return type.kind == TypeAction::Kind::keep && intensity.kind == IntensityAction::Kind::keep;
  }
  /// Masks must be binary, a donor non-empty and values finite.
  void validate() const;
};

/// Applies one edit to the masked pixels. Channels the edit does not touch,
/// and every unmasked pixel, are copied bit for bit. Edited intensities are
/// clamped to [0, 1]. An empty region is a logged no-op.
LatentMap apply_edit(const LatentMap& latent, const RegionEdit& edit);

/// Resolves a mask reference from edit JSON into a region mask.
using MaskResolver = std::function<RegionMask(const nlohmann::json& reference)>;

/// Resolver for references of the form "path.png" (white = selected, relative
/// to `base_dir`), {"label": n} or {"labels": [n, ...]} into `labels`
/// (may be null when only paths are used).
MaskResolver make_mask_resolver(const std::filesystem::path& base_dir, const LabelMap* labels);

/// Edit record:
///   {"region": <mask ref>,
///    "type": {"action": "keep" | "set_vector" | "copy_from_region", "vector": [a,b,c], "donor": <mask ref>},
///    "intensity": {"action": "keep" | "set_constant" | "scale" | "offset", "value": v}}
/// Missing "type"/"intensity" mean keep; a record where both keep is rejected.
RegionEdit region_edit_from_json(const nlohmann::json& j, const MaskResolver& resolve);
std::vector<RegionEdit> region_edits_from_json(const nlohmann::json& j, const MaskResolver& resolve);

struct PaletteEntry {
  ScreentoneSpec spec;
  Vec3 type = Vec3::Zero();
};

/// Edge length of the square exemplar swatches the palette encodes.
inline constexpr int kPaletteSwatch = 64;

/// Encodes each spec rendered at intensity 0.5 and takes the mean of its
/// unit-scale type feature over the swatch.
std::vector<PaletteEntry> palette_from_exemplars(const Model& model, const std::vector<ScreentoneSpec>& specs);

/// `n` palette entries. With a pool (for example a dataset's spec bank) the
/// exemplars are drawn from it, without repetition while it lasts; otherwise
/// random specs over all families are drawn. Deterministic for a given rng state.
std::vector<PaletteEntry> sample_type_palette(const Model& model, int n, Rng& rng,
                                              const std::vector<ScreentoneSpec>* pool = nullptr);

nlohmann::json to_json(const PaletteEntry& entry);

/// Encodes a page of any size: mirror-pads to the model's input multiple,
/// encodes deterministically and crops the latent back to the page.
LatentMap encode_page(const Model& model, const GrayImage& page);
/// Decodes a page-size latent of any size (mirror padding, then crop).
GrayImage decode_page(const Model& model, const LatentMap& latent);

/// Black-on-white rendering of a line mask (lines 0, elsewhere 1).
BitonalImage line_image(const LineMask& line_mask);

/// decode(latent) with structural lines laid on top by pointwise minimum.
/// The latent must already have the model's input multiple as size.
GrayImage recompose(const LatentMap& latent, const Model& model, const BitonalImage& lines);

struct RegionStats {
  std::size_t pixels = 0;
  double mean_intensity = 0.0;
  Vec3 mean_type = Vec3::Zero();
};

/// Means over the region's pixels (zero when the region is empty).
RegionStats region_stats(const LatentMap& latent, const RegionMask& region);
nlohmann::json to_json(const RegionStats& stats);

/// A page under edit. Pages of any size are accepted: the page-size latent is
/// mirror-padded to the size the model needs and masks are extended with
/// zeros. Single writer; copies share the model parameters read-only.
class EditSession {
 public:
  /// Encodes the page.
  EditSession(Model model, GrayImage source, LineMask line_mask);
  /// Starts from a stored page-size latent instead of encoding.
  EditSession(Model model, GrayImage source, LineMask line_mask, const LatentMap& latent);

  const GrayImage& source() const { return source_; }
  const LineMask& line_mask() const { return line_mask_; }
  int height() const { return source_.height(); }
  int width() const { return source_.width(); }

  /// Latent of the original page / after all edits, cropped to page size.
  LatentMap original_latent() const;
  LatentMap latent() const;

  const std::optional<SegmentationResult>& segmentation() const { return segmentation_; }
  const SegmentationResult& segment(Rng& rng, const SegmentOptions& options = {});

  void apply(const RegionEdit& edit);
  /// Drops the most recent edit; false when there is none.
  bool undo();
  const std::vector<RegionEdit>& edits() const { return edits_; }

  /// recompose of the current latent, cached until the next change.
  const GrayImage& preview();

  const Model& model() const { return model_; }

 private:
  void init(const LatentMap& latent);
  RegionEdit pad_edit(const RegionEdit& edit) const;
  void rebuild();

  Model model_;
  GrayImage source_;
  LineMask line_mask_;
  BitonalImage padded_lines_;
  LatentMap base_;     // padded
  LatentMap current_;  // padded
  std::vector<RegionEdit> edits_;
  std::optional<SegmentationResult> segmentation_;
  std::optional<GrayImage> preview_;
};

}  // namespace mangatone
