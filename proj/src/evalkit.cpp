// SPDX-License-Identifier: Apache-2.0
#include "mangatone/evalkit.hpp"

#include <array>
#include <cmath>
#include <complex>
#include <iomanip>
#include <map>
#include <numbers>
#include <sstream>

#include "mangatone/error.hpp"
#include "mangatone/imgproc.hpp"

namespace mangatone {

namespace {

struct RegionAccumulator {
  std::vector<double> sum, sum_sq;
  std::size_t count = 0;
};

std::map<int, RegionAccumulator> accumulate_regions(const FeatureRaster& f, const LabelMap& labels,
                                                     const LineMask& mask) {
  require(f.shape().same_plane(labels.shape()), "metrics: features and labels are misaligned");
  require(f.shape().same_plane(mask.shape()), "metrics: features and line mask are misaligned");
  const int channels = f.channels();
  std::map<int, RegionAccumulator> regions;
  const auto& grid = labels.grid();
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (mask[i] == 0) continue;
    auto& r = regions[grid[i]];
    if (r.sum.empty()) {
      r.sum.assign(static_cast<std::size_t>(channels), 0.0);
      r.sum_sq.assign(static_cast<std::size_t>(channels), 0.0);
    }
    ++r.count;
    for (int c = 0; c < channels; ++c) {
      const double v = f.plane(c)[i];
      r.sum[static_cast<std::size_t>(c)] += v;
      r.sum_sq[static_cast<std::size_t>(c)] += v * v;
    }
  }
  return regions;
}

GrayImage downsample2(const GrayImage& img) {
  const int h = img.height() / 2, w = img.width() / 2;
  GrayImage out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      out(y, x) = 0.25f * (img(2 * y, 2 * x) + img(2 * y + 1, 2 * x) + img(2 * y, 2 * x + 1) + img(2 * y + 1, 2 * x + 1));
  return out;
}

/// (mean luminance-contrast-structure, mean contrast-structure) at one scale.
std::pair<double, double> ssim_terms(const GrayImage& a, const GrayImage& b) {
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03, sigma = 1.5;
  const int h = a.height(), w = a.width();
  const auto n = a.size();
  std::vector<double> va(a.values().begin(), a.values().end()), vb(b.values().begin(), b.values().end());
  std::vector<double> aa(n), bb(n), ab(n);
  for (std::size_t i = 0; i < n; ++i) {
    aa[i] = va[i] * va[i];
    bb[i] = vb[i] * vb[i];
    ab[i] = va[i] * vb[i];
  }
  const auto ma = imgproc::gaussian_blur(std::span<const double>(va), h, w, sigma);
  const auto mb = imgproc::gaussian_blur(std::span<const double>(vb), h, w, sigma);
  const auto saa = imgproc::gaussian_blur(std::span<const double>(aa), h, w, sigma);
  const auto sbb = imgproc::gaussian_blur(std::span<const double>(bb), h, w, sigma);
  const auto sab = imgproc::gaussian_blur(std::span<const double>(ab), h, w, sigma);
  double ssim = 0.0, cs = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double var_a = saa[i] - ma[i] * ma[i], var_b = sbb[i] - mb[i] * mb[i], cov = sab[i] - ma[i] * mb[i];
    const double l = (2.0 * ma[i] * mb[i] + c1) / (ma[i] * ma[i] + mb[i] * mb[i] + c1);
    const double c = (2.0 * cov + c2) / (var_a + var_b + c2);
    ssim += l * c;
    cs += c;
  }
  return {ssim / static_cast<double>(n), cs / static_cast<double>(n)};
}

using Complex = std::complex<double>;

/// 1-D correlation along rows (axis 1) or columns (axis 0) with mirrored borders.
std::vector<Complex> correlate(const std::vector<Complex>& in, int h, int w, const std::vector<Complex>& kernel, int axis) {
  const int r = static_cast<int>(kernel.size() / 2);
  std::vector<Complex> out(in.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      Complex acc = 0.0;
      for (int t = -r; t <= r; ++t) {
        const int yy = axis == 0 ? imgproc::reflect(y + t, h) : y;
        const int xx = axis == 1 ? imgproc::reflect(x + t, w) : x;
        acc += kernel[static_cast<std::size_t>(t + r)] * in[static_cast<std::size_t>(yy) * w + xx];
      }
      out[static_cast<std::size_t>(y) * w + x] = acc;
    }
  return out;
}

}  // namespace

double page_summarization(const FeatureRaster& f, const LabelMap& labels, const LineMask& mask) {
  const auto regions = accumulate_regions(f, labels, mask);
  if (regions.empty()) return 0.0;
  double total = 0.0;
  for (const auto& [label, r] : regions) {
    double region = 0.0;
    for (std::size_t c = 0; c < r.sum.size(); ++c) {
      const double mean = r.sum[c] / static_cast<double>(r.count);
      region += std::sqrt(std::max(0.0, r.sum_sq[c] / static_cast<double>(r.count) - mean * mean));
    }
    total += region / static_cast<double>(r.sum.size());
  }
  return total / static_cast<double>(regions.size());
}

std::optional<double> page_distinguishability(const FeatureRaster& f, const LabelMap& labels, const LineMask& mask) {
  const auto regions = accumulate_regions(f, labels, mask);
  if (regions.size() < 2) return std::nullopt;
  const auto channels = static_cast<std::size_t>(f.channels());
  const auto k = static_cast<double>(regions.size());
  double total = 0.0;
  for (std::size_t c = 0; c < channels; ++c) {
    double s = 0.0, s2 = 0.0;
    for (const auto& [label, r] : regions) {
      const double m = r.sum[c] / static_cast<double>(r.count);
      s += m;
      s2 += m * m;
    }
    const double mean = s / k;
    total += std::sqrt(std::max(0.0, s2 / k - mean * mean));
  }
  return total / static_cast<double>(channels);
}

double summarization(std::span<const PageFeatures> pages) {
  if (pages.empty()) return 0.0;
  double total = 0.0;
  for (const auto& p : pages) total += page_summarization(p.features, p.labels, p.line_mask);
  return total / static_cast<double>(pages.size());
}

double distinguishability(std::span<const PageFeatures> pages) {
  double total = 0.0;
  int counted = 0;
  for (const auto& p : pages) {
    if (const auto d = page_distinguishability(p.features, p.labels, p.line_mask)) {
      total += *d;
      ++counted;
    }
  }
  return counted > 0 ? total / counted : 0.0;
}

double intensity_mae(const IntensityMap& predicted, const IntensityMap& truth, const LineMask* mask) {
  require(predicted.shape() == truth.shape(), "intensity_mae: shape mismatch");
  if (mask != nullptr) require(mask->shape().same_plane(truth.shape()), "intensity_mae: mask shape mismatch");
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (mask != nullptr && (*mask)[i] == 0) continue;
    total += std::abs(static_cast<double>(predicted[i]) - static_cast<double>(truth[i]));
    ++n;
  }
  return n > 0 ? total / static_cast<double>(n) : 0.0;
}

double mse_distance(const GrayImage& x_hat, const GrayImage& x) {
  require(x_hat.shape() == x.shape(), "mse_distance: shape mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x_hat[i]) - static_cast<double>(x[i]);
    total += d * d;
  }
  return total / static_cast<double>(x.size());
}

double ms_ssim(const GrayImage& a, const GrayImage& b) {
  require(a.shape() == b.shape() && a.channels() == 1, "ms_ssim: shape mismatch");
  static constexpr std::array<double, 5> weights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  int scales = 1;
  while (scales < 5 && std::min(a.height(), a.width()) >> scales >= 8) ++scales;
  double weight_sum = 0.0;
  for (int s = 0; s < scales; ++s) weight_sum += weights[static_cast<std::size_t>(s)];
  GrayImage x = a, y = b;
  double result = 1.0;
  for (int s = 0; s < scales; ++s) {
    const auto [ssim, cs] = ssim_terms(x, y);
    const double wgt = weights[static_cast<std::size_t>(s)] / weight_sum;
    result *= std::pow(std::max(0.0, s + 1 == scales ? ssim : cs), wgt);
    if (s + 1 < scales) {
      x = downsample2(x);
      y = downsample2(y);
    }
  }
  return result;
}

double ms_ssim_distance(const GrayImage& x_hat, const GrayImage& x) { return 1.0 - ms_ssim(x_hat, x); }

double reconstruction_distance(const GrayImage& x_hat, const GrayImage& x, const ImageDistance& metric) {
  require(static_cast<bool>(metric), "reconstruction_distance: no metric");
  return metric(x_hat, x);
}

GaborBank GaborBank::standard() {
  GaborBank bank;
  for (int i = 0; i < 6; ++i) bank.orientations.push_back(std::numbers::pi * i / 6.0);
  bank.wavelengths = {4.0, 8.0, 16.0, 32.0};
  return bank;
}

void GaborBank::validate() const {
  require(orientations.size() >= 4, "Gabor bank needs at least 4 orientations");
  require(wavelengths.size() >= 3, "Gabor bank needs at least 3 scales");
  for (double l : wavelengths) require(l >= 2.0, "Gabor wavelengths must be at least 2 pixels");
  require(sigma_ratio > 0.0 && smoothing_ratio >= 0.0, "Gabor envelope ratios must be positive");
}

FeatureRaster gabor_features(const GrayImage& image, const GaborBank& bank) {
  bank.validate();
  const int h = image.height(), w = image.width();
  const int n_orient = static_cast<int>(bank.orientations.size());
  FeatureRaster out(Shape{bank.channels(), h, w});
  std::vector<Complex> img(image.values().begin(), image.values().end());
  for (std::size_t s = 0; s < bank.wavelengths.size(); ++s) {
    const double lambda = bank.wavelengths[s];
    const double sigma = bank.sigma_ratio * lambda;
    const int r = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<Complex> g(static_cast<std::size_t>(2 * r + 1));
    double g_sum = 0.0;
    for (int t = -r; t <= r; ++t) {
      g[static_cast<std::size_t>(t + r)] = std::exp(-0.5 * t * t / (sigma * sigma));
      g_sum += g[static_cast<std::size_t>(t + r)].real();
    }
    const double norm = g_sum * g_sum;
    const auto smooth = correlate(correlate(img, h, w, g, 1), h, w, g, 0);
    const double k = 2.0 * std::numbers::pi / lambda;
    for (int o = 0; o < n_orient; ++o) {
      const double theta = bank.orientations[static_cast<std::size_t>(o)];
      const double kx = k * std::cos(theta), ky = k * std::sin(theta);
      std::vector<Complex> gx(g.size()), gy(g.size());
      Complex sx = 0.0, sy = 0.0;
      for (int t = -r; t <= r; ++t) {
        const auto i = static_cast<std::size_t>(t + r);
        gx[i] = g[i] * std::polar(1.0, kx * t);
        gy[i] = g[i] * std::polar(1.0, ky * t);
        sx += gx[i];
        sy += gy[i];
      }
      const Complex dc = sx * sy / norm;
      const auto resp = correlate(correlate(img, h, w, gx, 1), h, w, gy, 0);
      std::vector<double> mag(resp.size());
      for (std::size_t i = 0; i < resp.size(); ++i) mag[i] = std::abs((resp[i] - dc * smooth[i]) / norm);
      const auto blurred = imgproc::gaussian_blur(std::span<const double>(mag), h, w, bank.smoothing_ratio * lambda);
      auto dst = out.plane(static_cast<int>(s) * n_orient + o);
      for (std::size_t i = 0; i < blurred.size(); ++i) dst[i] = static_cast<float>(blurred[i]);
    }
  }
  return out;
}

double adjusted_rand_index(const LabelMap& a, const LabelMap& b, const LineMask* mask) {
  require(a.shape() == b.shape(), "adjusted_rand_index: label maps differ in size");
  if (mask != nullptr) require(mask->shape().same_plane(a.shape()), "adjusted_rand_index: mask shape mismatch");
  std::map<std::pair<int, int>, double> table;
  std::map<int, double> rows, cols;
  double n = 0.0;
  for (std::size_t i = 0; i < a.grid().size(); ++i) {
    if (mask != nullptr && (*mask)[i] == 0) continue;
    const int x = a.grid()[i], y = b.grid()[i];
    table[{x, y}] += 1.0;
    rows[x] += 1.0;
    cols[y] += 1.0;
    n += 1.0;
  }
  auto pairs = [](double m) { return m * (m - 1.0) / 2.0; };
  double index = 0.0, sum_rows = 0.0, sum_cols = 0.0;
  for (const auto& [key, m] : table) index += pairs(m);
  for (const auto& [key, m] : rows) sum_rows += pairs(m);
  for (const auto& [key, m] : cols) sum_cols += pairs(m);
  if (n < 2.0) return 1.0;
  const double expected = sum_rows * sum_cols / pairs(n);
  const double max_index = 0.5 * (sum_rows + sum_cols);
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

nlohmann::json MetricReport::to_json() const {
  return {{"summarization", summarization},
          {"distinguishability", distinguishability},
          {"intensity_mae", intensity_mae},
          {"reconstruction", reconstruction},
          {"reconstruction_mse", reconstruction_mse},
          {"dataset_id", dataset_id},
          {"model_id", model_id},
          {"pages", pages}};
}

nlohmann::json BenchmarkReport::to_json() const {
  const double ratio = model.summarization > 0.0 ? model.distinguishability / model.summarization : 0.0;
  const double gabor_ratio = gabor_summarization > 0.0 ? gabor_distinguishability / gabor_summarization : 0.0;
  return {{"model", model.to_json()},
          {"ratio", ratio},
          {"gabor", {{"summarization", gabor_summarization}, {"distinguishability", gabor_distinguishability}, {"ratio", gabor_ratio}}}};
}

std::string BenchmarkReport::table() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << std::left << std::setw(22) << "metric" << std::right << std::setw(12) << "gabor" << std::setw(12) << "ours" << '\n';
  auto row = [&](const std::string& name, std::optional<double> g, double v) {
    os << std::left << std::setw(22) << name << std::right << std::setw(12);
    if (g) os << *g; else os << "-";
    os << std::setw(12) << v << '\n';
  };
  row("summarization", gabor_summarization, model.summarization);
  row("distinguishability", gabor_distinguishability, model.distinguishability);
  row("intensity MAE", std::nullopt, model.intensity_mae);
  row("1 - MS-SSIM", std::nullopt, model.reconstruction);
  row("reconstruction MSE", std::nullopt, model.reconstruction_mse);
  return os.str();
}

std::vector<std::string> check_schema(const nlohmann::json& doc, const nlohmann::json& schema) {
  std::vector<std::string> problems;
  std::function<void(const nlohmann::json&, const nlohmann::json&, const std::string&)> visit =
      [&](const nlohmann::json& d, const nlohmann::json& s, const std::string& path) {
        if (s.contains("type")) {
          const auto type = s["type"].get<std::string>();
          const bool ok = (type == "object" && d.is_object()) || (type == "array" && d.is_array()) ||
                          (type == "string" && d.is_string()) || (type == "number" && d.is_number()) ||
                          (type == "integer" && d.is_number_integer()) || (type == "boolean" && d.is_boolean());
          if (!ok) {
            problems.push_back(path + ": expected " + type);
            return;
          }
        }
        if (s.contains("minimum") && d.is_number() && d.get<double>() < s["minimum"].get<double>())
          problems.push_back(path + ": below minimum");
        if (d.is_number() && !std::isfinite(d.get<double>())) problems.push_back(path + ": not finite");
        if (s.contains("required"))
          for (const auto& key : s["required"])
            if (!d.contains(key.get<std::string>())) problems.push_back(path + ": missing " + key.get<std::string>());
        if (s.contains("properties") && d.is_object())
          for (const auto& [key, sub] : s["properties"].items())
            if (d.contains(key)) visit(d[key], sub, path + "/" + key);
      };
  visit(doc, schema, "");
  return problems;
}

const nlohmann::json& benchmark_report_schema() {
  static const nlohmann::json schema = nlohmann::json::parse(R"({
  "$schema": "https://json-schema.org/draft/2020-12/schema",
  "title": "mangatone benchmark report",
  "type": "object",
  "required": ["model", "ratio", "gabor"],
  "properties": {
    "model": {
      "type": "object",
      "required": ["summarization", "distinguishability", "intensity_mae", "reconstruction",
                   "reconstruction_mse", "dataset_id", "model_id", "pages"],
      "properties": {
        "summarization": {"type": "number", "minimum": 0},
        "distinguishability": {"type": "number", "minimum": 0},
        "intensity_mae": {"type": "number", "minimum": 0},
        "reconstruction": {"type": "number", "minimum": 0},
        "reconstruction_mse": {"type": "number", "minimum": 0},
        "dataset_id": {"type": "string"},
        "model_id": {"type": "string"},
        "pages": {"type": "integer", "minimum": 0}
      }
    },
    "ratio": {"type": "number", "minimum": 0},
    "gabor": {
      "type": "object",
      "required": ["summarization", "distinguishability", "ratio"],
      "properties": {
        "summarization": {"type": "number", "minimum": 0},
        "distinguishability": {"type": "number", "minimum": 0},
        "ratio": {"type": "number", "minimum": 0}
      }
    }
  }
})");
  return schema;
}

}  // namespace mangatone
