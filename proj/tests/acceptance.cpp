// SPDX-License-Identifier: Apache-2.0
//
// Acceptance runner: evaluates every acceptance criterion at its stated
// tolerance and prints one PASS/FAIL line per criterion, followed by the
// measured values. Criteria that need the desk-scale checkpoint read it from
// the directory given by MANGATONE_DESK_DIR (default: models/ in the source
// tree); a missing checkpoint fails those criteria.
//
// The exit status is 0 once every criterion has been evaluated, so the suite
// reports failures without aborting the test run; pass --strict to exit 1
// when any criterion fails.
#include <torch/torch.h>
#undef CHECK

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "mangatone/dataset.hpp"
#include "mangatone/evalkit.hpp"
#include "mangatone/gateway.hpp"
#include "mangatone/iahm.hpp"
#include "mangatone/io.hpp"
#include "mangatone/losses.hpp"
#include "mangatone/network.hpp"
#include "mangatone/nn/losses.hpp"
#include "mangatone/nn/modules.hpp"
#include "mangatone/region.hpp"
#include "mangatone/rescreener.hpp"
#include "mangatone/segmenter.hpp"
#include "mangatone/tonegen.hpp"

#include "gradcheck.hpp"
#include "oracles.hpp"

#include <httplib.h>

using namespace mangatone;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

fs::path scratch(const std::string& name) {
  auto d = fs::temp_directory_path() / ("mangatone_acceptance_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

// ---------------------------------------------------------------------------
// Analytic and oracle criteria

Outcome iahm_exactness() {
  double extreme = 0.0;
  IntensityMap ends(1, 3);
  ends[0] = 0.0f;
  ends[1] = 1.0f;
  ends[2] = 0.5f;
  TypeFeatureMap unit(Shape{3, 1, 3}, 1.0f);
  const auto scaled = iahm_forward(ends, unit);
  extreme = std::max({std::abs(double(scaled(0, 0, 0))), std::abs(double(scaled(0, 0, 1)))});
  const double mid = std::abs(iahm_radius(0.5) - 1.0);
  const double mid_map = std::abs(double(scaled(0, 0, 2)) - 1.0);

  Rng rng(1);
  const int n = 181;
  IntensityMap intensity(1, n);
  for (int i = 0; i < n; ++i) intensity[static_cast<std::size_t>(i)] = static_cast<float>(0.05 + 0.9 * i / (n - 1));
  const auto type = oracle::random_type(1, n, rng);
  const auto back = iahm_inverse(intensity, iahm_forward(intensity, type));
  double identity = 0.0;
  for (std::size_t i = 0; i < type.size(); ++i) identity = std::max(identity, std::abs(double(back[i]) - double(type[i])));

  const bool pass = extreme <= 1e-9 && mid <= 1e-9 && mid_map <= 1e-9 && identity <= 1e-6;
  return {pass, "|r(0)|,|r(1)| max " + fmt(extreme) + ", |r(0.5)-1| " + fmt(std::max(mid, mid_map)) +
                    ", inverse-forward max error " + fmt(identity)};
}

Outcome loss_closed_forms() {
  auto kl_at = [](float mu, float sigma) {
    return loss_kl(TypeFeatureMap(Shape{3, 4, 4}, mu), TypeFeatureMap(Shape{3, 4, 4}, sigma));
  };
  const double k0 = std::abs(kl_at(0, 1));
  const double k1 = std::abs(kl_at(1, 1) - 0.5);
  const double k2 = std::abs(kl_at(0, 2) - 0.80685);

  double worst = 0.0;
  Rng rng(3);
  auto track = [&](double got, double want) { worst = std::max(worst, std::abs(got - want)); };
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = oracle::random_raster<GrayImage>(Shape{1, 8, 8}, rng);
    const auto y = oracle::random_raster<GrayImage>(Shape{1, 8, 8}, rng);
    track(loss_rec(x, y), oracle::mse(x, y));
    const auto p = oracle::random_raster<IntensityMap>(Shape{1, 8, 8}, rng);
    const auto q = oracle::random_raster<IntensityMap>(Shape{1, 8, 8}, rng);
    track(loss_itn(p, q), oracle::mse(p, q));
    const auto mu = oracle::random_type(8, 8, rng);
    const auto sigma = oracle::random_raster<TypeFeatureMap>(Shape{3, 8, 8}, rng, 0.05, 3.0);
    track(loss_kl(mu, sigma), oracle::kl(mu, sigma));
    const auto sr = oracle::random_raster<FeatureRaster>(Shape{1, 8, 8}, rng, 0.01, 0.99);
    const auto sf = oracle::random_raster<FeatureRaster>(Shape{1, 8, 8}, rng, 0.01, 0.99);
    const auto sq = oracle::random_raster<FeatureRaster>(Shape{1, 8, 8}, rng, 0.01, 0.99);
    const auto adv = loss_adv(sr, sf, sq);
    const auto want = oracle::adversarial(sr, sf, sq);
    track(adv.generator, want.generator);
    track(adv.discriminator, want.discriminator);
    const auto labels = oracle::random_labels(8, 8, 1 + trial % 5, rng);
    const auto mask = oracle::random_line_mask(8, 8, rng);
    track(loss_fcons(mu, labels, mask), oracle::fcons(mu, labels, mask));
    const LatentMap a{p, mu}, b{q, oracle::random_type(8, 8, rng)};
    track(loss_frec(a, b), oracle::frec(a, b));
  }
  const bool pass = k0 <= 1e-5 && k1 <= 1e-5 && k2 <= 1e-5 && worst <= 1e-6;
  return {pass, "kl closed-form errors " + fmt(k0) + ", " + fmt(k1) + ", " + fmt(k2) +
                    "; max |loss - loop oracle| over 20 instances " + fmt(worst)};
}

Outcome gradient_checks() {
  using oracle::gradient_error;
  using oracle::rand64;
  torch::manual_seed(5);
  double worst = 0.0;
  auto track = [&](double e) { worst = std::max(worst, e); };

  const auto target = rand64({1, 1, 4, 4});
  track(gradient_error([&](const torch::Tensor& x) { return nn::mse(x, target); }, rand64({1, 1, 4, 4})));
  const auto latent_target = rand64({1, 4, 4, 4}, -1, 1);
  track(gradient_error([&](const torch::Tensor& x) { return nn::mse(x, latent_target); }, rand64({1, 4, 4, 4}, -1, 1)));
  const auto log_sigma = rand64({1, 3, 4, 4}, -1, 1);
  const auto mu = rand64({1, 3, 4, 4}, -2, 2);
  track(gradient_error([&](const torch::Tensor& m) { return nn::kl_divergence(m, log_sigma); }, mu));
  track(gradient_error([&](const torch::Tensor& ls) { return nn::kl_divergence(mu, ls); }, log_sigma));
  const auto labels = torch::randint(0, 3, {1, 4, 4}, torch::kInt64);
  const auto weight = (torch::rand({1, 1, 4, 4}, torch::kFloat64) < 0.7).to(torch::kFloat64);
  track(gradient_error([&](const torch::Tensor& f) { return nn::feature_consistency(f, labels, weight); }, mu));
  const auto s1 = rand64({1, 1, 4, 4}, 0.05, 0.95), s2 = rand64({1, 1, 4, 4}, 0.05, 0.95),
             s3 = rand64({1, 1, 4, 4}, 0.05, 0.95);
  track(gradient_error([&](const torch::Tensor& s) { return nn::adversarial_from_scores(s, s2, s3).discriminator; }, s1));
  track(gradient_error([&](const torch::Tensor& s) { return nn::adversarial_from_scores(s1, s, s3).discriminator; }, s2));
  track(gradient_error([&](const torch::Tensor& s) { return nn::adversarial_from_scores(s1, s2, s).discriminator; }, s3));
  track(gradient_error([&](const torch::Tensor& s) { return nn::adversarial_from_scores(s1, s, s3).generator; }, s2));
  track(gradient_error([&](const torch::Tensor& s) { return nn::adversarial_from_scores(s1, s2, s).generator; }, s3));
  const double losses_worst = worst;

  ModelConfig mini;
  mini.base_channels = 2;
  mini.encoder_levels = 2;
  mini.encoder_residual_blocks = 1;
  mini.decoder_levels = 2;
  mini.intensity_level = 1;
  nn::Encoder encoder(mini);
  nn::Decoder decoder(mini);
  nn::initialize_parameters(*encoder, 17);
  nn::initialize_parameters(*decoder, 18);
  encoder->to(torch::kFloat64);
  decoder->to(torch::kFloat64);
  const auto image = rand64({1, 1, 8, 8});
  const auto w_itn = torch::randn({1, 1, 8, 8}, torch::kFloat64);
  const auto w_mu = torch::randn({1, 3, 8, 8}, torch::kFloat64);
  const auto w_sig = torch::randn({1, 3, 8, 8}, torch::kFloat64);
  const auto w_out = torch::randn({1, 1, 8, 8}, torch::kFloat64);
  auto encoder_objective = [&](const torch::Tensor& x) {
    const auto e = encoder->forward(x);
    return (e.intensity * w_itn).sum() + (e.mu * w_mu).sum() + (e.log_sigma * w_sig).sum();
  };
  const auto intensity = rand64({1, 1, 8, 8}, 0.1, 0.9);
  const auto type = torch::randn({1, 3, 8, 8}, torch::kFloat64);
  track(gradient_error(encoder_objective, image));
  track(gradient_error([&](const torch::Tensor& t) { return (decoder->forward(intensity, t) * w_out).sum(); }, type));
  track(gradient_error([&](const torch::Tensor& i) { return (decoder->forward(i, type) * w_out).sum(); }, intensity));
  track(oracle::parameter_gradient_error(*encoder, [&] { return encoder_objective(image); }));
  track(oracle::parameter_gradient_error(*decoder, [&] { return (decoder->forward(intensity, type) * w_out).sum(); }));

  return {worst < 1e-3, "max relative error: losses " + fmt(losses_worst) + ", all incl. 2-level encoder/decoder " +
                            fmt(worst) + " (h = 1e-4)"};
}

Outcome generator_coverage() {
  Rng rng(11);
  const ToneFamily families[] = {ToneFamily::dot, ToneFamily::line, ToneFamily::grid, ToneFamily::cross_hatch,
                                 ToneFamily::noise};
  double worst = 0.0;
  bool involution = true;
  for (int i = 0; i < 200; ++i) {
    ScreentoneSpec spec;
    spec.family = families[i % 5];
    spec.period_px = uniform(rng, 3.0, 16.0);
    spec.angle_deg = uniform(rng, 0.0, 180.0);
    spec.target_intensity = uniform01(rng);
    spec.inverted = uniform01(rng) < 0.5;
    spec.phase_x = uniform01(rng);
    spec.phase_y = uniform01(rng);
    spec.seed = rng();
    const auto tone = render_screentone(spec, 96, 96);
    worst = std::max(worst, std::abs(oracle::pixel_coverage(tone) - spec.target_intensity));
    involution = involution && invert_tone(invert_tone(tone)) == tone;
  }
  return {worst <= 0.02 && involution, "max |coverage - target| over 200 specs " + fmt(worst) +
                                           ", invert_tone involution " + (involution ? "exact" : "broken")};
}

Outcome segmentation_oracles() {
  double sil_err = 0.0;
  for (int n : {100, 300, 500}) {
    Rng rng(static_cast<std::uint64_t>(n));
    std::vector<Vec3> pts;
    std::vector<int> labels;
    for (int i = 0; i < n; ++i) {
      const int l = static_cast<int>(uniform_index(rng, 4));
      pts.push_back(Vec3(l, 0.5 * l, 0) + Vec3(standard_normal(rng), standard_normal(rng), standard_normal(rng)));
      labels.push_back(l);
    }
    const auto s = silhouette_score(pts, labels);
    sil_err = std::max(sil_err, s ? std::abs(*s - oracle::silhouette(pts, labels)) : 1.0);
  }

  bool monotone = true;
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    Rng rng(seed);
    std::vector<Vec3> pts;
    for (int b = 0; b < 3; ++b) {
      const Vec3 c(uniform(rng, -3, 3), uniform(rng, -3, 3), uniform(rng, -3, 3));
      const auto blob = oracle::gaussian_blob(c, uniform(rng, 0.2, 1.0), 150, rng);
      pts.insert(pts.end(), blob.begin(), blob.end());
    }
    GmmOptions opts;
    opts.tol = 0.0;
    opts.max_iter = 60;
    const auto fit = fit_gmm(pts, 2 + static_cast<int>(seed % 3), rng, opts);
    if (fit.reseeded) continue;
    for (std::size_t i = 1; i < fit.log_likelihood.size(); ++i)
      monotone = monotone && fit.log_likelihood[i] >= fit.log_likelihood[i - 1] - 1e-9;
  }

  Rng rng(2);
  auto pts = oracle::gaussian_blob(Vec3(3, 0, 0), 0.5, 400, rng);
  const auto other = oracle::gaussian_blob(Vec3(-3, 1, 0), 0.5, 400, rng);
  pts.insert(pts.end(), other.begin(), other.end());
  auto means = fit_gmm(pts, 2, rng).model.means;
  std::sort(means.begin(), means.end(), [](const Vec3& a, const Vec3& b) { return a(0) < b(0); });
  const double recovery = std::max((means[0] - Vec3(-3, 1, 0)).norm(), (means[1] - Vec3(3, 0, 0)).norm());

  return {sil_err <= 1e-9 && monotone && recovery <= 0.1,
          "silhouette vs O(n^2) max error " + fmt(sil_err) + " (n <= 500), EM log-likelihood " +
              (monotone ? "monotone" : "NOT monotone") + ", two-Gaussian mean error " + fmt(recovery)};
}

// ---------------------------------------------------------------------------
// Gateway protocol with a random-init checkpoint

std::string png_body(const GrayImage& img) {
  const auto bytes = io::encode_png(img);
  return {bytes.begin(), bytes.end()};
}

class Server {
 public:
  explicit Server(GatewayConfig config) : gateway_(std::move(config)) {
    port_ = gateway_.bind();
    thread_ = std::thread([this] { gateway_.listen(); });
    gateway_.wait_until_ready();
  }
  ~Server() {
    gateway_.stop();
    thread_.join();
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port_);
    c.set_read_timeout(300, 0);
    return c;
  }

 private:
  Gateway gateway_;
  int port_ = 0;
  std::thread thread_;
};

Outcome gateway_protocol() {
  const auto dir = scratch("gateway");
  ModelConfig mc;
  mc.base_channels = 4;
  mc.encoder_residual_blocks = 1;
  mc.decoder_levels = 4;
  mc.discriminator_blocks = 2;
  save_model(dir / "random.ckpt", Model(mc, 7));

  DatasetConfig dc;
  dc.count = 1;
  dc.height = 64;
  dc.width = 80;
  dc.num_specs = 4;
  dc.seed = 3;
  const auto page = to_gray(load_page(build_dataset(dc, dir / "page"), 0).image);
  const auto body = png_body(page);

  GatewayConfig base;
  base.port = 0;
  base.palette_size = 2;
  base.threads = 4;

  // model_unready gating
  bool gated = false;
  {
    auto cfg = base;
    cfg.data_dir = dir / "nomodel";
    Server server(cfg);
    auto c = server.client();
    const auto r = c.Post("/projects", body, "image/png");
    const auto health = c.Get("/healthz");
    gated = r && r->status == 503 && json::parse(r->body)["error"]["code"] == "model_unready" && health &&
            json::parse(health->body)["model_ready"] == false;
  }

  auto cfg = base;
  cfg.data_dir = dir / "data";
  cfg.checkpoint = dir / "random.ckpt";
  std::string id, after_first;
  bool undo_identical = false;
  int created = 0, conflicts = 0;
  {
    Server server(cfg);
    auto c = server.client();
    auto r = c.Post("/projects", body, "image/png");
    if (!r || r->status != 201) return {false, "project creation failed"};
    id = json::parse(r->body)["id"];
    const std::string p = "/projects/" + id;
    c.Post(p + "/segment", json{{"seed", 1}, {"k_max", 3}}.dump(), "application/json");
    GrayImage mask(page.height(), page.width(), 0.0f);
    for (int y = 0; y < page.height() / 2; ++y)
      for (int x = 0; x < page.width(); ++x) mask(y, x) = 1.0f;
    const auto mask_id = json::parse(c.Post(p + "/masks", png_body(mask), "image/png")->body)["mask"].get<std::string>();
    c.Post(p + "/edits",
           json{{"edit", {{"region", {{"label", 0}}}, {"type", {{"action", "set_vector"}, {"vector", {0.5, -0.5, 1.0}}}}}}}
               .dump(),
           "application/json");
    after_first = c.Get(p + "/preview")->body;
    c.Post(p + "/edits", json{{"edit", {{"region", mask_id}, {"intensity", {{"action", "scale"}, {"value", 1.3}}}}}}.dump(),
           "application/json");
    c.Delete(p + "/edits/last");
    undo_identical = c.Get(p + "/preview")->body == after_first;

    // Concurrent writers on one stale version: exactly one wins.
    const int version = json::parse(c.Get(p)->body)["version"];
    const json edit{{"version", version},
                    {"edit", {{"region", mask_id}, {"intensity", {{"action", "offset"}, {"value", 0.1}}}}}};
    std::vector<int> statuses(4);
    std::vector<std::thread> writers;
    for (std::size_t i = 0; i < statuses.size(); ++i)
      writers.emplace_back([&, i] {
        auto cc = server.client();
        auto res = cc.Post(p + "/edits", edit.dump(), "application/json");
        statuses[i] = res ? res->status : -1;
      });
    for (auto& t : writers) t.join();
    created = static_cast<int>(std::count(statuses.begin(), statuses.end(), 201));
    conflicts = static_cast<int>(std::count(statuses.begin(), statuses.end(), 409));
    c.Delete(p + "/edits/last");
  }
  // Replay after a restart rebuilds the same bytes from history alone.
  bool replay_identical = false;
  {
    Server server(cfg);
    auto c = server.client();
    const auto r = c.Get("/projects/" + id + "/preview");
    replay_identical = r && r->status == 200 && r->body == after_first;
  }
  const bool pass = gated && undo_identical && replay_identical && created == 1 && conflicts == 3;
  return {pass, std::string("model_unready gating ") + (gated ? "ok" : "broken") + ", undo byte-identical " +
                    (undo_identical ? "yes" : "no") + ", replay after restart byte-identical " +
                    (replay_identical ? "yes" : "no") + ", concurrent stale writes " + std::to_string(created) +
                    " x 201 / " + std::to_string(conflicts) + " x 409"};
}

// ---------------------------------------------------------------------------
// Criteria on the desk-scale checkpoint

struct Desk {
  fs::path checkpoint;
  DatasetConfig train;  // spec bank shared by every split
  std::optional<Model> model;
  fs::path heldout_manifest;
  std::optional<DatasetManifest> heldout;
  std::optional<DatasetManifest> ramp;
  std::string problem;
};

Desk& desk() {
  static Desk d = [] {
    Desk x;
    const char* env = std::getenv("MANGATONE_DESK_DIR");
    const fs::path dir = env ? fs::path(env) : fs::path(MANGATONE_DEFAULT_DESK_DIR);
    const auto meta_path = dir / "desk.json";
    if (!fs::exists(meta_path)) {
      x.problem = "no desk-scale checkpoint description at " + meta_path.string();
      return x;
    }
    const auto meta = io::read_json(meta_path);
    x.checkpoint = dir / meta.at("checkpoint").get<std::string>();
    if (!fs::exists(x.checkpoint)) {
      x.problem = "checkpoint " + x.checkpoint.string() + " is missing";
      return x;
    }
    x.model = load_model(x.checkpoint);
    x.train = dataset_config_from_json(meta.at("dataset"));
    const auto root = scratch("desk");

    DatasetConfig held = x.train;
    held.first_page = meta.value("heldout_first_page", x.train.count);
    held.count = meta.value("heldout_pages", 20);
    x.heldout = build_dataset(held, root / "heldout");
    x.heldout_manifest = root / "heldout" / "manifest.json";

    DatasetConfig ramp = x.train;
    ramp.first_page = meta.value("ramp_first_page", 100000);
    ramp.count = 20;
    ramp.ramp_regions = 1;
    x.ramp = build_dataset(ramp, root / "ramp");
    return x;
  }();
  return d;
}

Outcome training_outcomes() {
  auto& d = desk();
  if (!d.model) return {false, d.problem};
  BenchmarkOptions opts;
  opts.run_gabor = false;
  opts.model_id = d.checkpoint.filename().string();
  const auto report = run_benchmark(*d.model, d.heldout_manifest, opts).model;
  const double ratio = report.summarization > 0 ? report.distinguishability / report.summarization : 0.0;
  const bool pass = report.intensity_mae <= 0.08 && ratio >= 3.0 && report.reconstruction_mse <= 0.05;
  return {pass, std::to_string(report.pages) + " held-out pages: intensity MAE " + fmt(report.intensity_mae) +
                    " (<= 0.08), distinguishability/summarization " + fmt(report.distinguishability) + "/" +
                    fmt(report.summarization) + " = " + fmt(ratio) + " (>= 3), reconstruction MSE " +
                    fmt(report.reconstruction_mse) + " (<= 0.05)"};
}

Outcome disentanglement() {
  auto& d = desk();
  if (!d.model) return {false, d.problem};
  int single = 0;
  double ari_sum = 0.0;
  const int pages = static_cast<int>(d.ramp->size());
  for (int i = 0; i < pages; ++i) {
    const auto page = load_page(*d.ramp, static_cast<std::size_t>(i));
    const auto image = to_gray(page.image);
    Rng rng(derive_seed(1234, static_cast<std::uint64_t>(i)));
    const auto seg = segment_page(encode_page(*d.model, image), page.line_mask, rng);

    int ramp_label = -1;
    for (std::size_t l = 0; l < page.directives.size(); ++l)
      if (page.directives[l].kind != DirectiveKind::constant && page.specs[l]) ramp_label = static_cast<int>(l);
    if (ramp_label >= 0) {
      std::map<int, std::size_t> votes;
      std::size_t total = 0;
      for (std::size_t k = 0; k < image.size(); ++k)
        if (page.labels.grid()[k] == ramp_label && page.line_mask[k]) {
          ++votes[seg.labels.grid()[k]];
          ++total;
        }
      std::size_t top = 0;
      for (const auto& [label, n] : votes) top = std::max(top, n);
      if (total > 0 && static_cast<double>(top) >= 0.9 * static_cast<double>(total)) ++single;
    }
    ari_sum += adjusted_rand_index(seg.labels, page.type_labels(), &page.line_mask);
  }
  const double ari = ari_sum / pages;
  return {single >= 16 && ari >= 0.8, "ramp region in one cluster (>= 90% of its pixels) on " + std::to_string(single) +
                                          "/" + std::to_string(pages) + " pages (>= 16), mean ARI " + fmt(ari) +
                                          " (>= 0.8)"};
}

Vec3 region_mean_type(const LatentMap& latent, const RegionMask& region) {
  Vec3 sum = Vec3::Zero();
  std::size_t n = 0;
  for (int y = 0; y < region.height(); ++y)
    for (int x = 0; x < region.width(); ++x)
      if (region(y, x)) {
        for (int c = 0; c < 3; ++c) sum(c) += latent.type_feature(c, y, x);
        ++n;
      }
  return n ? Vec3(sum / static_cast<double>(n)) : sum;
}

Outcome edit_invariances() {
  auto& d = desk();
  if (!d.model) return {false, d.problem};
  double mae_sum = 0.0, cos_sum = 0.0;
  int cases = 0;
  for (std::size_t i = 0; i < d.heldout->size(); ++i) {
    const auto page = load_page(*d.heldout, i);
    const auto types = page.type_labels();
    // Tone regions (line pixels removed), largest first.
    std::vector<std::pair<std::size_t, int>> regions;
    for (int l = 0; l < page.labels.num_labels(); ++l) {
      if (!page.specs[static_cast<std::size_t>(l)]) continue;
      std::size_t area = 0;
      for (std::size_t k = 0; k < page.labels.grid().size(); ++k)
        area += page.labels.grid()[k] == l && page.line_mask[k] ? 1 : 0;
      if (area >= 400) regions.emplace_back(area, l);
    }
    std::sort(regions.rbegin(), regions.rend());
    if (regions.size() < 2) continue;
    auto tone_mask = [&](int label) {
      RegionMask m(page.labels.height(), page.labels.width(), 0);
      for (std::size_t k = 0; k < m.size(); ++k) m[k] = page.labels.grid()[k] == label && page.line_mask[k] ? 1 : 0;
      return m;
    };
    auto type_of = [&](int label) {
      for (std::size_t k = 0; k < page.labels.grid().size(); ++k)
        if (page.labels.grid()[k] == label) return types.grid()[k];
      return -1;
    };
    const int target = regions[0].second;
    int donor = -1;
    for (std::size_t r = 1; r < regions.size() && donor < 0; ++r)
      if (type_of(regions[r].second) != type_of(target)) donor = regions[r].second;
    if (donor < 0) continue;
    const auto region = tone_mask(target);
    const auto image = to_gray(page.image);

    EditSession swap(*d.model, image, page.line_mask);
    const auto before = swap.original_latent();
    swap.apply({region, TypeAction::copy_from(tone_mask(donor)), {}});
    const auto swapped = encode_page(*d.model, swap.preview());
    double mae = 0.0;
    std::size_t n = 0;
    for (std::size_t k = 0; k < region.size(); ++k)
      if (region[k]) {
        mae += std::abs(double(swapped.intensity[k]) - double(before.intensity[k]));
        ++n;
      }
    mae /= static_cast<double>(n);

    double mean_itn = 0.0;
    for (std::size_t k = 0; k < region.size(); ++k)
      if (region[k]) mean_itn += before.intensity[k];
    mean_itn /= static_cast<double>(n);
    EditSession shade(*d.model, image, page.line_mask);
    shade.apply({region, {}, IntensityAction::constant(mean_itn > 0.5 ? 0.3 : 0.7)});
    const auto shaded = encode_page(*d.model, shade.preview());
    const Vec3 a = region_mean_type(before, region), b = region_mean_type(shaded, region);
    const double denom = a.norm() * b.norm();
    const double cosine = denom > 0 ? a.dot(b) / denom : 0.0;

    mae_sum += mae;
    cos_sum += cosine;
    ++cases;
  }
  if (cases == 0) return {false, "no held-out page had two tone regions of different types"};
  const double mae = mae_sum / cases, cosine = cos_sum / cases;
  return {mae <= 0.1 && cosine >= 0.9, std::to_string(cases) + " pages: type-swap re-encoded intensity MAE " +
                                           fmt(mae) + " (<= 0.1), intensity-edit region type cosine " + fmt(cosine) +
                                           " (>= 0.9)"};
}

}  // namespace

int main(int argc, char** argv) {
  const bool strict = argc > 1 && std::string(argv[1]) == "--strict";
  set_compute_threads(static_cast<int>(std::max(1u, std::thread::hardware_concurrency())));
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"IAHM exactness", iahm_exactness},
      {"Loss closed forms and loop oracles", loss_closed_forms},
      {"Gradient checks", gradient_checks},
      {"Generator coverage", generator_coverage},
      {"Desk-scale training outcomes", training_outcomes},
      {"Disentanglement on intensity ramps", disentanglement},
      {"Edit invariances", edit_invariances},
      {"Segmentation machinery oracles", segmentation_oracles},
      {"Gateway protocol", gateway_protocol},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
      outcome = run();
    } catch (const std::exception& e) {
      outcome = {false, std::string("error: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failed += outcome.pass ? 0 : 1;
    std::cout << (outcome.pass ? "PASS" : "FAIL") << "  " << name << "  [" << fmt(seconds, 3) << " s]  "
              << outcome.detail << std::endl;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed"
            << std::endl;
  return strict && failed > 0 ? 1 : 0;
}
