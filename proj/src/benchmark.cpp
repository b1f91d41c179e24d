// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <iomanip>
#include <sstream>

#include "mangatone/dataset.hpp"
#include "mangatone/evalkit.hpp"
#include "mangatone/log.hpp"
#include "mangatone/network.hpp"

namespace mangatone {

namespace {

template <class R>
R crop_top_left(const R& raster, int height, int width) {
  if (raster.height() == height && raster.width() == width) return raster;
  const int channels = raster.channels();
  R out(Shape{channels, height, width});
  for (int c = 0; c < channels; ++c) {
    const auto src = raster.plane(c);
    auto dst = out.plane(c);
    for (int y = 0; y < height; ++y)
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(y) * raster.width(), width,
                  dst.begin() + static_cast<std::ptrdiff_t>(y) * width);
  }
  return out;
}

}  // namespace

BenchmarkReport run_benchmark(const Model& model, const std::filesystem::path& manifest_path,
                              const BenchmarkOptions& options) {
  if (options.run_gabor) options.gabor.validate();
  const auto manifest = load_manifest(manifest_path);
  std::size_t count = manifest.size();
  if (options.max_pages > 0) count = std::min(count, options.max_pages);

  std::vector<PageFeatures> ours, gabor;
  double mae = 0.0, recon = 0.0, recon_mse = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const auto page = load_page(manifest, i);
    const int h = page.image.height(), w = page.image.width();
    const auto image = to_gray(page.image);
    const auto padded = pad_to_multiple(image, model.config().input_multiple());
    const auto encoded = model.encode(padded);
    const auto intensity = crop_top_left(encoded.latent.intensity, h, w);
    const auto type_feature = crop_top_left(encoded.latent.type_feature, h, w);
    const auto x_hat = crop_top_left(model.decode(encoded.latent), h, w);

    const auto truth = page.type_labels();
    ours.push_back({retag<FeatureRaster>(type_feature), truth, page.line_mask});
    if (options.run_gabor) gabor.push_back({gabor_features(image, options.gabor), truth, page.line_mask});
    mae += intensity_mae(intensity, page.intensity, &page.line_mask);
    recon += ms_ssim_distance(x_hat, image);
    recon_mse += mse_distance(x_hat, image);
    log::debug("benchmark page " + std::to_string(i + 1) + "/" + std::to_string(count));
  }

  BenchmarkReport report;
  auto& m = report.model;
  m.pages = static_cast<int>(count);
  std::ostringstream id;
  id << std::hex << std::setw(16) << std::setfill('0') << manifest.hash();
  m.dataset_id = id.str();
  m.model_id = options.model_id;
  if (count > 0) {
    const auto n = static_cast<double>(count);
    m.summarization = summarization(ours);
    m.distinguishability = distinguishability(ours);
    m.intensity_mae = mae / n;
    m.reconstruction = recon / n;
    m.reconstruction_mse = recon_mse / n;
  }
  if (options.run_gabor) {
    report.gabor_summarization = summarization(gabor);
    report.gabor_distinguishability = distinguishability(gabor);
  }
  return report;
}

BenchmarkReport run_benchmark(const std::filesystem::path& checkpoint, const std::filesystem::path& manifest,
                              BenchmarkOptions options) {
  if (options.model_id == BenchmarkOptions{}.model_id) options.model_id = checkpoint.filename().string();
  return run_benchmark(load_model(checkpoint), manifest, options);
}

}  // namespace mangatone
