// SPDX-License-Identifier: Apache-2.0
//
// Synthetic dataset generation and loading. Directory layout:
//   manifest.json
//   pages/{id}/image.png      8-bit page
//   pages/{id}/intensity.f32  ground-truth intensity, f32le H x W
//   pages/{id}/labels.u16     region labels, u16le H x W
//   pages/{id}/linemask.png   255 = tone pixel, 0 = structural line
//   pages/{id}/spec.json      per-region specs and directives
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mangatone/page.hpp"
#include "mangatone/tonegen.hpp"

namespace mangatone {

void to_json(nlohmann::json& j, const ScreentoneSpec& spec);
void from_json(const nlohmann::json& j, ScreentoneSpec& spec);
void to_json(nlohmann::json& j, const IntensityDirective& directive);
void from_json(const nlohmann::json& j, IntensityDirective& directive);

struct DatasetConfig {
  int count = 10;
  int first_page = 0;             // page indices first_page .. first_page+count-1; splits share the bank
  int height = 256;
  int width = 256;
  std::uint64_t seed = 0;
  int num_specs = 100;            // distinct base screentones; inverses are added on top
  bool include_inverses = true;
  std::map<ToneFamily, double> family_mix{{ToneFamily::dot, 1.0},
                                          {ToneFamily::line, 1.0},
                                          {ToneFamily::grid, 1.0},
                                          {ToneFamily::cross_hatch, 1.0},
                                          {ToneFamily::noise, 1.0}};
  double min_period = 4.0;
  double max_period = 12.0;
  double ramp_fraction = 0.3;     // share of regions with a linear or radial ramp
  /// When >= 0, exactly this many regions (largest first) get a linear ramp
  /// from ramp_from to ramp_to and every other region is constant.
  int ramp_regions = -1;
  double ramp_from = 0.2;
  double ramp_to = 0.8;
  double min_intensity = 0.05;
  double max_intensity = 0.95;
  LineArtOptions line_art{};

  void validate() const;
};

nlohmann::json to_json(const DatasetConfig& config);
DatasetConfig dataset_config_from_json(const nlohmann::json& j);

/// Deterministic bank of screentone types (base specs followed by their inverses).
std::vector<ScreentoneSpec> make_spec_bank(const DatasetConfig& config);

/// One random page drawn from the bank. Fully determined by (config, bank, page_seed).
SyntheticPage random_page(const DatasetConfig& config, const std::vector<ScreentoneSpec>& bank,
                          std::uint64_t page_seed);

std::uint64_t page_seed(std::uint64_t master_seed, int index);

struct DatasetManifest {
  std::filesystem::path root;
  nlohmann::json document;

  std::size_t size() const { return document.at("pages").size(); }
  /// 64-bit FNV-1a of the manifest bytes as written.
  std::uint64_t hash() const;
};

/// Writes `config.count` pages under `out_dir` plus manifest.json.
DatasetManifest build_dataset(const DatasetConfig& config, const std::filesystem::path& out_dir);

void save_page(const SyntheticPage& page, const std::filesystem::path& dir, const std::string& id,
               std::uint64_t seed);
nlohmann::json page_entry(const SyntheticPage& page, const std::string& id, std::uint64_t seed);

DatasetManifest load_manifest(const std::filesystem::path& manifest_path);
SyntheticPage load_page(const DatasetManifest& manifest, std::size_t index);

}  // namespace mangatone
