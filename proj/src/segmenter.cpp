// SPDX-License-Identifier: Apache-2.0
#include "mangatone/segmenter.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "mangatone/error.hpp"
#include "mangatone/imgproc.hpp"
#include "mangatone/log.hpp"

namespace mangatone {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;
constexpr double kEmptyComponent = 1e-3;

struct Component {
  Vec3 mean;
  Eigen::LLT<Mat3> chol;
  double log_norm;  // log w - 0.5 (3 log 2pi + log det)
};

std::vector<Component> factorize(const GmmModel& m) {
  std::vector<Component> out;
  out.reserve(static_cast<std::size_t>(m.k));
  for (int j = 0; j < m.k; ++j) {
    Eigen::LLT<Mat3> chol(m.covariances[j]);
    require(chol.info() == Eigen::Success, "GMM covariance is not positive definite");
    const Mat3 l = chol.matrixL();
    const double log_det = 2.0 * l.diagonal().array().log().sum();
    const double log_w = m.weights[j] > 0.0 ? std::log(m.weights[j]) : -std::numeric_limits<double>::infinity();
    out.push_back({m.means[j], std::move(chol), log_w - 0.5 * (3.0 * kLog2Pi + log_det)});
  }
  return out;
}

double component_log(const Component& c, const Vec3& x) {
  const Vec3 z = c.chol.matrixL().solve(x - c.mean);
  return c.log_norm - 0.5 * z.squaredNorm();
}

int most_responsible(const std::vector<Component>& comps, const Vec3& x) {
  int best = 0;
  double best_v = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < comps.size(); ++j) {
    const double v = component_log(comps[j], x);
    if (v > best_v) {
      best_v = v;
      best = static_cast<int>(j);
    }
  }
  return best;
}

double log_sum_exp(std::span<const double> v) {
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

Mat3 covariance_of(std::span<const Vec3> points, const Vec3& mean) {
  Mat3 c = Mat3::Zero();
  for (const auto& p : points) c.noalias() += (p - mean) * (p - mean).transpose();
  return points.empty() ? c : Mat3(c / static_cast<double>(points.size()));
}

Vec3 mean_of(std::span<const Vec3> points) {
  Vec3 m = Vec3::Zero();
  for (const auto& p : points) m += p;
  return points.empty() ? m : Vec3(m / static_cast<double>(points.size()));
}

std::vector<Vec3> kmeanspp(std::span<const Vec3> points, int k, Rng& rng) {
  const auto n = points.size();
  std::vector<Vec3> centers{points[uniform_index(rng, n)]};
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = (points[i] - centers[0]).squaredNorm();
  while (static_cast<int>(centers.size()) < k) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    std::size_t pick = 0;
    if (total <= 0.0) {
      pick = uniform_index(rng, n);
    } else {
      double r = uniform01(rng) * total;
      for (pick = 0; pick + 1 < n; ++pick) {
        r -= d2[pick];
        if (r < 0.0) break;
      }
    }
    centers.push_back(points[pick]);
    for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], (points[i] - centers.back()).squaredNorm());
  }
  return centers;
}

/// Indices of a seeded subsample of size min(n, m), in ascending order.
std::vector<std::size_t> subsample(std::size_t n, std::size_t m, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (m >= n) return idx;
  for (std::size_t i = 0; i < m; ++i) std::swap(idx[i], idx[i + uniform_index(rng, n - i)]);
  idx.resize(m);
  std::sort(idx.begin(), idx.end());
  return idx;
}

void merge_small_regions(std::vector<std::int32_t>& labels, int h, int w, int min_px) {
  const auto n = labels.size();
  std::vector<std::int32_t> comp(n, -1);
  std::vector<std::vector<std::size_t>> members;
  const std::array<std::pair<int, int>, 4> nbrs{{{0, 1}, {1, 0}, {0, -1}, {-1, 0}}};
  for (std::size_t s = 0; s < n; ++s) {
    if (comp[s] >= 0) continue;
    const auto id = static_cast<std::int32_t>(members.size());
    members.emplace_back();
    std::deque<std::size_t> queue{s};
    comp[s] = id;
    while (!queue.empty()) {
      const auto p = queue.front();
      queue.pop_front();
      members.back().push_back(p);
      const int y = static_cast<int>(p) / w, x = static_cast<int>(p) % w;
      for (auto [dy, dx] : nbrs) {
        const int yy = y + dy, xx = x + dx;
        if (yy < 0 || xx < 0 || yy >= h || xx >= w) continue;
        const auto q = static_cast<std::size_t>(yy) * w + xx;
        if (comp[q] < 0 && labels[q] == labels[s]) {
          comp[q] = id;
          queue.push_back(q);
        }
      }
    }
  }
  std::vector<std::size_t> order(members.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return members[a].size() < members[b].size(); });
  for (auto c : order) {
    const auto& px = members[c];
    if (static_cast<int>(px.size()) >= min_px) break;
    const auto own = labels[px.front()];
    std::map<std::int32_t, std::size_t> border;
    for (auto p : px) {
      const int y = static_cast<int>(p) / w, x = static_cast<int>(p) % w;
      for (auto [dy, dx] : nbrs) {
        const int yy = y + dy, xx = x + dx;
        if (yy < 0 || xx < 0 || yy >= h || xx >= w) continue;
        const auto l = labels[static_cast<std::size_t>(yy) * w + xx];
        if (l != own) ++border[l];
      }
    }
    if (border.empty()) continue;
    const auto best = std::max_element(border.begin(), border.end(),
                                       [](const auto& a, const auto& b) { return a.second < b.second; });
    for (auto p : px) labels[p] = best->first;
  }
}

}  // namespace

double GmmModel::log_density(const Vec3& x) const {
  const auto comps = factorize(*this);
  std::vector<double> terms;
  for (const auto& c : comps) terms.push_back(component_log(c, x));
  return log_sum_exp(terms);
}

double GmmModel::mean_log_likelihood(std::span<const Vec3> points) const {
  if (points.empty()) return 0.0;
  const auto comps = factorize(*this);
  std::vector<double> terms(comps.size());
  double total = 0.0;
  for (const auto& x : points) {
    for (std::size_t j = 0; j < comps.size(); ++j) terms[j] = component_log(comps[j], x);
    total += log_sum_exp(terms);
  }
  return total / static_cast<double>(points.size());
}

int GmmModel::predict(const Vec3& x) const { return most_responsible(factorize(*this), x); }

void GmmModel::validate() const {
  require(k >= 1, "GMM needs at least one component");
  require(means.size() == static_cast<std::size_t>(k) && covariances.size() == means.size() &&
              weights.size() == means.size(),
          "GMM parameter counts disagree with k");
  const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  require(std::abs(sum - 1.0) <= 1e-9, "GMM weights must sum to 1");
  for (const auto& c : covariances) {
    require((c - c.transpose()).cwiseAbs().maxCoeff() <= 1e-12, "GMM covariance must be symmetric");
    Eigen::SelfAdjointEigenSolver<Mat3> eig(c, Eigen::EigenvaluesOnly);
    require(eig.eigenvalues().minCoeff() >= 1e-8, "GMM covariance must be positive definite");
  }
}

nlohmann::json to_json(const GmmModel& m) {
  nlohmann::json comps = nlohmann::json::array();
  for (int j = 0; j < m.k; ++j) {
    const auto& mu = m.means[j];
    const auto& c = m.covariances[j];
    comps.push_back({{"weight", m.weights[j]},
                     {"mean", {mu(0), mu(1), mu(2)}},
                     {"covariance",
                      {{c(0, 0), c(0, 1), c(0, 2)}, {c(1, 0), c(1, 1), c(1, 2)}, {c(2, 0), c(2, 1), c(2, 2)}}}});
  }
  return {{"k", m.k}, {"components", comps}};
}

GmmModel gmm_from_json(const nlohmann::json& j) {
  GmmModel m;
  m.k = j.at("k").get<int>();
  for (const auto& c : j.at("components")) {
    m.weights.push_back(c.at("weight").get<double>());
    const auto mu = c.at("mean").get<std::vector<double>>();
    require(mu.size() == 3, "GMM mean must have 3 entries");
    m.means.emplace_back(mu[0], mu[1], mu[2]);
    Mat3 cov;
    const auto rows = c.at("covariance").get<std::vector<std::vector<double>>>();
    require(rows.size() == 3, "GMM covariance must be 3x3");
    for (int r = 0; r < 3; ++r) {
      require(rows[r].size() == 3, "GMM covariance must be 3x3");
      for (int s = 0; s < 3; ++s) cov(r, s) = rows[r][s];
    }
    m.covariances.push_back(cov);
  }
  m.validate();
  return m;
}

GmmFit fit_gmm(std::span<const Vec3> points, int k, Rng& rng, const GmmOptions& options) {
  require(k >= 1, "fit_gmm: k must be at least 1");
  require(points.size() >= static_cast<std::size_t>(k), "fit_gmm: fewer points than components");
  require(options.max_iter >= 1 && options.ridge > 0.0 && options.tol >= 0.0, "fit_gmm: invalid options");
  const auto n = points.size();
  const auto ku = static_cast<std::size_t>(k);
  const Mat3 ridge = options.ridge * Mat3::Identity();
  const Vec3 global_mean = mean_of(points);
  const Mat3 global_cov = covariance_of(points, global_mean) + ridge;

  GmmFit fit;
  auto& m = fit.model;
  m.k = k;
  m.means = kmeanspp(points, k, rng);
  {
    std::vector<std::vector<Vec3>> groups(ku);
    for (const auto& p : points) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < ku; ++j)
        if ((p - m.means[j]).squaredNorm() < (p - m.means[best]).squaredNorm()) best = j;
      groups[best].push_back(p);
    }
    for (std::size_t j = 0; j < ku; ++j) {
      m.weights.push_back(std::max<double>(static_cast<double>(groups[j].size()), 1.0));
      m.covariances.push_back(groups[j].size() >= 2 ? Mat3(covariance_of(groups[j], m.means[j]) + ridge) : global_cov);
    }
    const double total = std::accumulate(m.weights.begin(), m.weights.end(), 0.0);
    for (auto& w : m.weights) w /= total;
  }

  Eigen::MatrixXd resp(static_cast<Eigen::Index>(n), k);
  std::vector<double> terms(ku);
  for (int iter = 0; iter < options.max_iter; ++iter) {
    const auto comps = factorize(m);
    double ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < ku; ++j) terms[j] = component_log(comps[j], points[i]);
      const double lse = log_sum_exp(terms);
      ll += lse;
      for (std::size_t j = 0; j < ku; ++j) resp(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = std::exp(terms[j] - lse);
    }
    ll /= static_cast<double>(n);
    if (!fit.log_likelihood.empty() && ll - fit.log_likelihood.back() < options.tol) {
      fit.log_likelihood.push_back(ll);
      fit.converged = true;
      break;
    }
    fit.log_likelihood.push_back(ll);

    for (std::size_t j = 0; j < ku; ++j) {
      const auto col = resp.col(static_cast<Eigen::Index>(j));
      const double nk = col.sum();
      if (nk < kEmptyComponent) {
        if (fit.reseeded) {
          fit.degenerate = true;
          m.weights[j] = 0.0;
          m.covariances[j] = global_cov;
          continue;
        }
        fit.reseeded = true;
        std::size_t worst = 0;
        double worst_ll = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t c = 0; c < ku; ++c) terms[c] = component_log(comps[c], points[i]);
          const double v = log_sum_exp(terms);
          if (v < worst_ll) {
            worst_ll = v;
            worst = i;
          }
        }
        m.means[j] = points[worst];
        m.covariances[j] = global_cov;
        m.weights[j] = 1.0 / static_cast<double>(n);
        continue;
      }
      Vec3 mu = Vec3::Zero();
      for (std::size_t i = 0; i < n; ++i) mu += col(static_cast<Eigen::Index>(i)) * points[i];
      mu /= nk;
      Mat3 cov = Mat3::Zero();
      for (std::size_t i = 0; i < n; ++i) {
        const Vec3 d = points[i] - mu;
        cov.noalias() += col(static_cast<Eigen::Index>(i)) * d * d.transpose();
      }
      cov /= nk;
      m.means[j] = mu;
      m.covariances[j] = 0.5 * (cov + cov.transpose()) + ridge;
      m.weights[j] = nk / static_cast<double>(n);
    }
    const double total = std::accumulate(m.weights.begin(), m.weights.end(), 0.0);
    for (auto& w : m.weights) w /= total;
  }
  if (!fit.converged) fit.log_likelihood.push_back(m.mean_log_likelihood(points));
  if (fit.degenerate) log::warn("fit_gmm: a component collapsed twice (k = " + std::to_string(k) + ")");
  return fit;
}

std::optional<double> silhouette_score(std::span<const Vec3> points, std::span<const int> labels,
                                       std::size_t max_points, Rng* rng) {
  require(points.size() == labels.size(), "silhouette_score: points and labels differ in length");
  std::vector<std::size_t> idx;
  if (points.size() > max_points) {
    Rng fallback(0);
    idx = subsample(points.size(), max_points, rng != nullptr ? *rng : fallback);
  } else {
    idx.resize(points.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
  }
  std::map<int, std::size_t> ids;
  for (auto i : idx) ids.emplace(labels[i], 0);
  if (ids.size() < 2) return std::nullopt;
  std::size_t next = 0;
  for (auto& [label, id] : ids) id = next++;
  const auto n = idx.size(), kc = ids.size();
  std::vector<std::size_t> cluster(n), counts(kc, 0);
  for (std::size_t a = 0; a < n; ++a) {
    cluster[a] = ids.at(labels[idx[a]]);
    ++counts[cluster[a]];
  }
  std::vector<double> sums(n * kc, 0.0);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + 1; b < n; ++b) {
      const double d = (points[idx[a]] - points[idx[b]]).norm();
      sums[a * kc + cluster[b]] += d;
      sums[b * kc + cluster[a]] += d;
    }
  double total = 0.0;
  for (std::size_t a = 0; a < n; ++a) {
    const auto own = cluster[a];
    const double intra = counts[own] > 1 ? sums[a * kc + own] / static_cast<double>(counts[own] - 1) : 0.0;
    double nearest = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < kc; ++c)
      if (c != own) nearest = std::min(nearest, sums[a * kc + c] / static_cast<double>(counts[c]));
    const double denom = std::max(intra, nearest);
    total += denom > 0.0 ? (nearest - intra) / denom : 0.0;
  }
  return total / static_cast<double>(n);
}

void SegmentOptions::validate() const {
  require(k_min >= 1 && k_min <= k_max, "segment: k range must satisfy 1 <= k_min <= k_max");
  require(variance_threshold >= 0.0, "segment: variance threshold must be non-negative");
  require(max_fit_points >= 2 && max_silhouette_points >= 2, "segment: sample caps must be at least 2");
  require(min_region_px >= 0, "segment: min_region_px must be non-negative");
}

nlohmann::json to_json(const SegmentationResult& r) {
  nlohmann::json sil = nlohmann::json::array();
  for (const auto& s : r.silhouettes) sil.push_back(s ? nlohmann::json(*s) : nlohmann::json(nullptr));
  return {{"k", r.k},
          {"silhouette", r.silhouette ? nlohmann::json(*r.silhouette) : nlohmann::json(nullptr)},
          {"silhouette_by_k", sil},
          {"height", r.labels.height()},
          {"width", r.labels.width()},
          {"gmm", to_json(r.model)}};
}

std::vector<Vec3> type_features(const TypeFeatureMap& f, const LineMask& line_mask) {
  require(f.channels() == kTypeChannels, "type features must have 3 channels");
  require(f.shape().same_plane(line_mask.shape()), "type features and line mask are misaligned");
  std::vector<Vec3> out;
  const auto p0 = f.plane(0), p1 = f.plane(1), p2 = f.plane(2);
  for (std::size_t i = 0; i < line_mask.size(); ++i)
    if (line_mask[i] != 0) out.emplace_back(p0[i], p1[i], p2[i]);
  return out;
}

SegmentationResult segment_page(const LatentMap& latent, const LineMask& line_mask, Rng& rng,
                                const SegmentOptions& options) {
  latent.validate();
  return segment_features(latent.type_feature, line_mask, rng, options);
}

SegmentationResult segment_features(const TypeFeatureMap& type_feature, const LineMask& line_mask, Rng& rng,
                                    const SegmentOptions& options) {
  options.validate();
  const auto features = type_features(type_feature, line_mask);
  const int h = type_feature.height(), w = type_feature.width();
  SegmentationResult result{LabelMap(h, w, 1), 1, std::nullopt, {}, {}};
  if (features.size() < 2) {
    result.model = {1, {features.empty() ? Vec3::Zero() : features[0]}, {Mat3::Identity()}, {1.0}};
    return result;
  }

  const auto sample_idx = subsample(features.size(), options.max_fit_points, rng);
  std::vector<Vec3> sample;
  sample.reserve(sample_idx.size());
  for (auto i : sample_idx) sample.push_back(features[i]);
  const std::uint64_t base = rng();

  const Vec3 mean = mean_of(sample);
  const double variance = covariance_of(sample, mean).trace() / 3.0;

  std::optional<GmmModel> best;
  double best_score = -std::numeric_limits<double>::infinity();
  const int k_hi = std::min<int>(options.k_max, static_cast<int>(sample.size()));
  const bool allow_one = options.k_min <= 1;
  if (!(allow_one && variance < options.variance_threshold)) {
    for (int k = std::max(options.k_min, 2); k <= k_hi; ++k) {
      Rng fit_rng(derive_seed(base, static_cast<std::uint64_t>(k)));
      const auto fit = fit_gmm(sample, k, fit_rng, options.gmm);
      const auto comps = factorize(fit.model);
      std::vector<int> labels(sample.size());
      for (std::size_t i = 0; i < sample.size(); ++i) labels[i] = most_responsible(comps, sample[i]);
      Rng sil_rng(derive_seed(base, 1000 + static_cast<std::uint64_t>(k)));
      const auto score = silhouette_score(sample, labels, options.max_silhouette_points, &sil_rng);
      result.silhouettes.push_back(score);
      log::debug("segment: k = " + std::to_string(k) + " silhouette = " + (score ? std::to_string(*score) : "undefined"));
      if (score && *score > best_score) {
        best_score = *score;
        best = fit.model;
        result.silhouette = score;
      }
    }
  }
  if (!best) {
    const int k = allow_one ? 1 : std::max(options.k_min, 1);
    Rng fit_rng(derive_seed(base, static_cast<std::uint64_t>(k)));
    best = fit_gmm(sample, std::min<int>(k, static_cast<int>(sample.size())), fit_rng, options.gmm).model;
    result.silhouette.reset();
  }
  result.model = *best;
  result.k = result.model.k;

  std::vector<std::int32_t> grid(static_cast<std::size_t>(h) * w, -1);
  const auto p0 = type_feature.plane(0), p1 = type_feature.plane(1), p2 = type_feature.plane(2);
  const auto comps = factorize(result.model);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (line_mask[i] == 0) continue;
    grid[i] = most_responsible(comps, Vec3(p0[i], p1[i], p2[i]));
  }
  imgproc::propagate_labels(grid, h, w);
  if (options.min_region_px > 0) merge_small_regions(grid, h, w, options.min_region_px);
  result.labels = LabelMap(LabelMap::Grid(Shape{1, h, w}, std::move(grid)), result.k);
  return result;
}

PcaBasis pca_basis(const TypeFeatureMap& features, const LineMask& line_mask) {
  const auto pts = type_features(features, line_mask);
  PcaBasis basis;
  if (pts.empty()) return basis;
  basis.mean = mean_of(pts);
  Eigen::SelfAdjointEigenSolver<Mat3> eig(covariance_of(pts, basis.mean));
  for (int c = 0; c < 3; ++c) {
    basis.eigenvalues(c) = eig.eigenvalues()(2 - c);
    Vec3 v = eig.eigenvectors().col(2 - c);
    Eigen::Index at = 0;
    v.cwiseAbs().maxCoeff(&at);
    if (v(at) < 0.0) v = -v;
    basis.eigenvectors.col(c) = v;
  }
  return basis;
}

FeatureRaster pca_visualize(const TypeFeatureMap& features, const LineMask& line_mask) {
  const auto basis = pca_basis(features, line_mask);
  const int h = features.height(), w = features.width();
  const auto n = static_cast<std::size_t>(h) * w;
  FeatureRaster out(Shape{3, h, w}, 0.0f);
  const auto p0 = features.plane(0), p1 = features.plane(1), p2 = features.plane(2);
  std::array<std::vector<double>, 3> proj;
  std::array<double, 3> lo, hi;
  lo.fill(std::numeric_limits<double>::infinity());
  hi.fill(-std::numeric_limits<double>::infinity());
  for (int c = 0; c < 3; ++c) proj[c].resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 x = Vec3(p0[i], p1[i], p2[i]) - basis.mean;
    for (int c = 0; c < 3; ++c) {
      proj[c][i] = basis.eigenvectors.col(c).dot(x);
      if (line_mask[i] != 0) {
        lo[c] = std::min(lo[c], proj[c][i]);
        hi[c] = std::max(hi[c], proj[c][i]);
      }
    }
  }
  for (int c = 0; c < 3; ++c) {
    auto dst = out.plane(c);
    const double range = hi[c] - lo[c];
    for (std::size_t i = 0; i < n; ++i) {
      if (line_mask[i] == 0) continue;
      dst[i] = range > 1e-12 ? static_cast<float>(std::clamp((proj[c][i] - lo[c]) / range, 0.0, 1.0)) : 0.5f;
    }
  }
  return out;
}

FeatureRaster render_segmentation(const LabelMap& labels, const LineMask& line_mask) {
  require(labels.shape().same_plane(line_mask.shape()), "render_segmentation: misaligned line mask");
  static constexpr std::array<std::array<float, 3>, 10> palette{{{0.12f, 0.47f, 0.71f},
                                                                 {1.00f, 0.50f, 0.05f},
                                                                 {0.17f, 0.63f, 0.17f},
                                                                 {0.84f, 0.15f, 0.16f},
                                                                 {0.58f, 0.40f, 0.74f},
                                                                 {0.55f, 0.34f, 0.29f},
                                                                 {0.89f, 0.47f, 0.76f},
                                                                 {0.50f, 0.50f, 0.50f},
                                                                 {0.74f, 0.74f, 0.13f},
                                                                 {0.09f, 0.75f, 0.81f}}};
  FeatureRaster out(Shape{3, labels.height(), labels.width()}, 0.0f);
  const auto& grid = labels.grid();
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (line_mask[i] == 0) continue;
    const auto& rgb = palette[static_cast<std::size_t>(grid[i]) % palette.size()];
    for (int c = 0; c < 3; ++c) out.plane(c)[i] = rgb[static_cast<std::size_t>(c)];
  }
  return out;
}

}  // namespace mangatone
