// SPDX-License-Identifier: Apache-2.0
//
// Quantitative metrics: region summarization/distinguishability of a feature
// representation, intensity error, reconstruction distance, a Gabor
// filter-bank baseline and the benchmark driver that ties them together.
#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mangatone/raster.hpp"

namespace mangatone {

class Model;

/// One page's features with its ground-truth regions.
struct PageFeatures {
  FeatureRaster features;
  LabelMap labels;
  LineMask line_mask;
};

/// Mean over regions of the per-channel standard deviation inside the region
/// (channels averaged). Only non-line pixels count.
double page_summarization(const FeatureRaster& features, const LabelMap& labels, const LineMask& line_mask);
/// Standard deviation of the region-mean vectors across regions (per channel,
/// then averaged). std::nullopt when fewer than two regions have pixels.
std::optional<double> page_distinguishability(const FeatureRaster& features, const LabelMap& labels,
                                              const LineMask& line_mask);

/// Page averages of the above; single-region pages are skipped for
/// distinguishability (0 when no page qualifies).
double summarization(std::span<const PageFeatures> pages);
double distinguishability(std::span<const PageFeatures> pages);

/// Mean absolute error, optionally restricted to pixels where mask != 0.
double intensity_mae(const IntensityMap& predicted, const IntensityMap& truth, const LineMask* mask = nullptr);

/// Pluggable image distance, 0 for identical images.
using ImageDistance = std::function<double(const GrayImage& x_hat, const GrayImage& x)>;

double mse_distance(const GrayImage& x_hat, const GrayImage& x);
/// Multi-scale SSIM on [0, 1] images (Gaussian window sigma 1.5, up to five
/// scales, fewer for small images). Contrast-structure terms are floored at 0.
double ms_ssim(const GrayImage& a, const GrayImage& b);
/// 1 - ms_ssim: the default perceptual proxy.
double ms_ssim_distance(const GrayImage& x_hat, const GrayImage& x);
double reconstruction_distance(const GrayImage& x_hat, const GrayImage& x, const ImageDistance& metric = ms_ssim_distance);

struct GaborBank {
  /// Wave-vector angles in radians; 0 responds to vertical stripes.
  std::vector<double> orientations;
  /// Wavelengths in pixels.
  std::vector<double> wavelengths;
  /// Envelope sigma as a multiple of the wavelength.
  double sigma_ratio = 0.56;
  /// Post-magnitude smoothing sigma as a multiple of the wavelength.
  double smoothing_ratio = 0.5;

  /// 6 orientations x wavelengths {4, 8, 16, 32}.
  static GaborBank standard();
  void validate() const;
  int channels() const { return static_cast<int>(orientations.size() * wavelengths.size()); }
};

/// Smoothed magnitude responses, channel index = scale * orientations + orientation.
FeatureRaster gabor_features(const GrayImage& image, const GaborBank& bank);

/// Adjusted Rand index between two labelings, optionally over mask != 0 only.
double adjusted_rand_index(const LabelMap& a, const LabelMap& b, const LineMask* mask = nullptr);

struct MetricReport {
  double summarization = 0.0;
  double distinguishability = 0.0;
  double intensity_mae = 0.0;
  double reconstruction = 0.0;      // 1 - MS-SSIM
  double reconstruction_mse = 0.0;
  std::string dataset_id;
  std::string model_id;
  int pages = 0;

  nlohmann::json to_json() const;
};

struct BenchmarkReport {
  MetricReport model;
  double gabor_summarization = 0.0;
  double gabor_distinguishability = 0.0;

  nlohmann::json to_json() const;
  /// Fixed-width comparison table.
  std::string table() const;
};

struct BenchmarkOptions {
  /// Evaluate at most this many pages (all when 0).
  std::size_t max_pages = 0;
  GaborBank gabor = GaborBank::standard();
  bool run_gabor = true;
  std::string model_id = "model";
};

BenchmarkReport run_benchmark(const Model& model, const std::filesystem::path& manifest,
                              const BenchmarkOptions& options = {});
BenchmarkReport run_benchmark(const std::filesystem::path& checkpoint, const std::filesystem::path& manifest,
                              BenchmarkOptions options = {});

/// Checks `doc` against the subset of JSON Schema used by the published
/// report schema (type, required, properties, minimum). Returns the problems
/// found, empty when valid.
std::vector<std::string> check_schema(const nlohmann::json& doc, const nlohmann::json& schema);
/// The published metric-report schema.
const nlohmann::json& benchmark_report_schema();

}  // namespace mangatone
