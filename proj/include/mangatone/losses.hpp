// SPDX-License-Identifier: Apache-2.0
//
// The six training objectives on typed rasters. Squared-error terms are means
// over elements so the default weights do not depend on resolution.
#pragma once

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "mangatone/raster.hpp"

namespace mangatone {

inline constexpr double kLogGuard = 1e-8;

struct LossWeights {
  double rec = 10.0;
  double adv = 1.0;
  double itn = 5.0;
  double kl = 1.0;
  double fcons = 20.0;
  double frec = 1.0;

  void validate() const;
  bool all_zero() const { return rec == 0 && adv == 0 && itn == 0 && kl == 0 && fcons == 0 && frec == 0; }
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

nlohmann::json to_json(const LossWeights& w);
LossWeights loss_weights_from_json(const nlohmann::json& j);

struct LossTerms {
  double rec = 0.0;
  double adv_g = 0.0;
  double adv_d = 0.0;
  double itn = 0.0;
  double kl = 0.0;
  double fcons = 0.0;
  double frec = 0.0;
};

struct LossReport {
  std::int64_t step = 0;
  LossTerms terms;
  double total = 0.0;  // generator objective; adv_d is reported but not summed

  nlohmann::json to_json() const;
  /// {"step":n,"rec":...,"adv_g":...,"adv_d":...,"itn":...,"kl":...,"fcons":...,"frec":...,"total":...}
  std::string to_json_line() const;
};

/// Weighted sum; throws TrainingAborted when a term is not finite.
LossReport total_loss(const LossTerms& terms, const LossWeights& weights, std::int64_t step = 0);

double loss_rec(const GrayImage& x_hat, const GrayImage& x);

struct AdversarialTerms {
  double generator = 0.0;
  double discriminator = 0.0;
};

/// Score maps in (0, 1); the three maps must share a shape.
AdversarialTerms loss_adv(const FeatureRaster& scores_real, const FeatureRaster& scores_fake_rec,
                          const FeatureRaster& scores_fake_rand);

double loss_itn(const IntensityMap& predicted, const IntensityMap& target);
double loss_kl(const TypeFeatureMap& mu, const TypeFeatureMap& sigma);
/// Line pixels (mask 0) carry zero weight; an all-line mask yields 0.
double loss_fcons(const TypeFeatureMap& type_feature, const LabelMap& labels, const LineMask& line_mask);
double loss_frec(const LatentMap& reencoded, const LatentMap& random_latent);

}  // namespace mangatone
