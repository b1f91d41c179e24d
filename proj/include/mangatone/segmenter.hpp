// SPDX-License-Identifier: Apache-2.0
//
// Screentone-type segmentation: Gaussian mixtures over the unit-scale type
// features, with the number of components chosen by silhouette score, and a
// PCA false-colour view of the feature map.
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "mangatone/random.hpp"
#include "mangatone/raster.hpp"

namespace mangatone {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct GmmModel {
  int k = 0;
  std::vector<Vec3> means;
  std::vector<Mat3> covariances;
  std::vector<double> weights;

  /// log( sum_j w_j N(x | mu_j, Sigma_j) ).
  double log_density(const Vec3& x) const;
  /// Mean log density over the points.
  double mean_log_likelihood(std::span<const Vec3> points) const;
  /// Index of the most responsible component.
  int predict(const Vec3& x) const;
  void validate() const;
};

nlohmann::json to_json(const GmmModel& model);
GmmModel gmm_from_json(const nlohmann::json& j);

struct GmmOptions {
  int max_iter = 200;
  double tol = 1e-7;     // stop once the mean log-likelihood gains less than this
  double ridge = 1e-6;   // added to every covariance diagonal
};

struct GmmFit {
  GmmModel model;
  /// Mean log-likelihood after each EM iteration.
  std::vector<double> log_likelihood;
  bool converged = false;
  /// A component collapsed and was reseeded once.
  bool reseeded = false;
  /// A component collapsed again after its reseed.
  bool degenerate = false;
};

/// EM with k-means++ seeding. Throws ContractViolation for k < 1 or fewer
/// than k points.
GmmFit fit_gmm(std::span<const Vec3> points, int k, Rng& rng, const GmmOptions& options = {});

/// Mean silhouette coefficient. Distances are Euclidean; a point alone in its
/// cluster has a = 0 and 0/0 counts as 0. Returns std::nullopt when fewer than
/// two clusters are populated. Inputs larger than `max_points` are subsampled
/// with `rng`.
std::optional<double> silhouette_score(std::span<const Vec3> points, std::span<const int> labels,
                                       std::size_t max_points = 5000, Rng* rng = nullptr);

struct SegmentOptions {
  int k_min = 1;
  int k_max = 10;
  /// Mean per-channel feature variance below which the page is one region.
  double variance_threshold = 0.05;
  std::size_t max_fit_points = 20000;
  std::size_t max_silhouette_points = 5000;
  /// Connected pieces smaller than this join their dominant neighbour.
  int min_region_px = 64;
  GmmOptions gmm{};

  void validate() const;
};

struct SegmentationResult {
  LabelMap labels;
  int k = 1;
  /// Absent when k = 1.
  std::optional<double> silhouette;
  GmmModel model;
  /// Silhouette per candidate k >= 2 that was fitted, index k - 2.
  std::vector<std::optional<double>> silhouettes;
};

nlohmann::json to_json(const SegmentationResult& result);

/// Features of non-line pixels: the unit-scale type vectors of the latent.
std::vector<Vec3> type_features(const TypeFeatureMap& type_feature, const LineMask& line_mask);

SegmentationResult segment_page(const LatentMap& latent, const LineMask& line_mask, Rng& rng,
                                const SegmentOptions& options = {});

/// Same as segment_page on a bare type-feature map.
SegmentationResult segment_features(const TypeFeatureMap& type_feature, const LineMask& line_mask, Rng& rng,
                                    const SegmentOptions& options = {});

struct PcaBasis {
  Vec3 mean = Vec3::Zero();
  Vec3 eigenvalues = Vec3::Zero();  // descending
  Mat3 eigenvectors = Mat3::Identity();  // columns, matching eigenvalues
};

/// Principal axes of the non-line feature vectors. Each eigenvector is signed
/// so that its largest-magnitude entry is positive.
PcaBasis pca_basis(const TypeFeatureMap& features, const LineMask& line_mask);

/// Projects onto the principal axes and stretches each component to [0, 1]
/// over the non-line pixels. Line pixels are black; a component without
/// spread is mid-grey.
FeatureRaster pca_visualize(const TypeFeatureMap& features, const LineMask& line_mask);

/// Label colours (10-colour palette, cycled) with black structural lines.
FeatureRaster render_segmentation(const LabelMap& labels, const LineMask& line_mask);

}  // namespace mangatone
