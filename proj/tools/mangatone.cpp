// SPDX-License-Identifier: Apache-2.0
//
// mangatone: single entry point for dataset synthesis, training, latent
// encode/decode, segmentation, rescreening, evaluation and the HTTP service.
//
// Exit status: 0 success, 1 domain error, 2 usage error. Data goes to stdout
// or the --out path; logs go to stderr.
#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mangatone/dataset.hpp"
#include "mangatone/error.hpp"
#include "mangatone/evalkit.hpp"
#include "mangatone/gateway.hpp"
#include "mangatone/intensity.hpp"
#include "mangatone/io.hpp"
#include "mangatone/log.hpp"
#include "mangatone/network.hpp"
#include "mangatone/random.hpp"
#include "mangatone/rescreener.hpp"
#include "mangatone/segmenter.hpp"
#include "mangatone/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mangatone::cli {
namespace {

struct Globals {
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string log_level = "info";
  int threads = 0;
  bool json_output = false;
};

// Thrown for flag combinations CLI11 cannot express; maps to exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void emit(const Globals& g, const json& doc, const std::string& text) {
  if (g.json_output) {
    std::cout << doc.dump() << "\n";
  } else if (!text.empty()) {
    std::cout << text << (text.back() == '\n' ? "" : "\n");
  }
}

void ensure_parent(const fs::path& out) {
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
}

LineMask page_line_mask(const GrayImage& page, const std::optional<fs::path>& mask_path) {
  if (mask_path) {
    auto mask = io::image_to_mask(io::load_png(*mask_path));
    require(mask.shape().same_plane(page.shape()), "line mask " + mask_path->string() + " does not match the page");
    return mask;
  }
  return fallback_line_mask(binarize(page));
}

std::pair<int, int> parse_krange(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw UsageError("--krange expects lo:hi, got '" + text + "'");
  try {
    const int lo = std::stoi(text.substr(0, colon));
    const int hi = std::stoi(text.substr(colon + 1));
    if (lo < 1 || hi < lo) throw UsageError("--krange needs 1 <= lo <= hi, got '" + text + "'");
    return {lo, hi};
  } catch (const std::logic_error&) {
    throw UsageError("--krange expects integers, got '" + text + "'");
  }
}

fs::path labels_path_for(const fs::path& out) {
  fs::path p = out;
  p.replace_extension(".labels.u16");
  return p;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  int n = 10;
  fs::path out;
  std::optional<fs::path> config;
  std::optional<int> height, width, specs, first_page, ramp_regions;
};

int run_synth(const Globals& g, const SynthArgs& a) {
  DatasetConfig config = a.config ? dataset_config_from_json(io::read_json(*a.config)) : DatasetConfig{};
  config.count = a.n;
  if (g.seed_given || !a.config) config.seed = g.seed;
  if (a.height) config.height = *a.height;
  if (a.width) config.width = *a.width;
  if (a.specs) config.num_specs = *a.specs;
  if (a.first_page) config.first_page = *a.first_page;
  if (a.ramp_regions) config.ramp_regions = *a.ramp_regions;
  config.validate();
  const auto manifest = build_dataset(config, a.out);
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(manifest.hash()));
  const fs::path manifest_path = a.out / "manifest.json";
  emit(g, {{"verb", "synth"}, {"manifest", manifest_path.string()}, {"pages", manifest.size()}, {"hash", hex}},
       manifest_path.string() + "  pages=" + std::to_string(manifest.size()) + "  hash=" + hex);
  return 0;
}

struct TrainArgs {
  fs::path config;
  std::optional<fs::path> resume;
  std::optional<fs::path> runs_dir;
};

int run_train(const Globals& g, const TrainArgs& a) {
  auto config = train_config_from_json(io::read_json(a.config), a.config.parent_path());
  if (g.seed_given) config.seed = g.seed;
  if (a.runs_dir) config.runs_dir = *a.runs_dir;
  config.validate();
  const auto result = run_training(config, a.resume, [&](const LossReport& report) {
    if (g.json_output)
      std::cout << report.to_json_line() << "\n" << std::flush;
    else
      log::info(report.to_json_line());
  });
  json summary{{"verb", "train"},
               {"final_checkpoint", result.final_checkpoint.string()},
               {"steps", config.total_steps()}};
  if (!result.reports.empty()) summary["last"] = result.reports.back().to_json();
  emit(g, summary, "final checkpoint: " + result.final_checkpoint.string());
  return 0;
}

struct CodecArgs {
  fs::path ckpt;
  fs::path image;
  fs::path latent;
  fs::path out;
};

int run_encode(const Globals& g, const CodecArgs& a) {
  const auto model = load_model(a.ckpt);
  const auto page = io::load_png(a.image);
  const auto latent = encode_page(model, page);
  ensure_parent(a.out);
  io::save_latent(a.out, latent);
  emit(g,
       {{"verb", "encode"},
        {"latent", a.out.string()},
        {"sidecar", io::sidecar_path(a.out).string()},
        {"shape", {kLatentChannels, page.height(), page.width()}}},
       a.out.string() + "  shape=4x" + std::to_string(page.height()) + "x" + std::to_string(page.width()));
  return 0;
}

int run_decode(const Globals& g, const CodecArgs& a) {
  const auto model = load_model(a.ckpt);
  const auto latent = io::load_latent(a.latent);
  const auto image = decode_page(model, latent);
  ensure_parent(a.out);
  io::save_png(a.out, image);
  emit(g, {{"verb", "decode"}, {"image", a.out.string()}, {"height", image.height()}, {"width", image.width()}},
       a.out.string());
  return 0;
}

struct SegmentArgs {
  fs::path ckpt, image, out;
  std::optional<fs::path> line_mask;
  std::string krange = "1:10";
  int min_region_px = 64;
};

int run_segment(const Globals& g, const SegmentArgs& a) {
  const auto [k_min, k_max] = parse_krange(a.krange);
  const auto model = load_model(a.ckpt);
  const auto page = io::load_png(a.image);
  const auto lines = page_line_mask(page, a.line_mask);
  SegmentOptions options;
  options.k_min = k_min;
  options.k_max = k_max;
  options.min_region_px = a.min_region_px;
  Rng rng(g.seed);
  const auto result = segment_page(encode_page(model, page), lines, rng, options);

  ensure_parent(a.out);
  io::save_png_rgb(a.out, render_segmentation(result.labels, lines));
  const fs::path labels_file = labels_path_for(a.out);
  io::save_labels_u16(labels_file, result.labels);
  json sidecar = to_json(result);
  sidecar["height"] = page.height();
  sidecar["width"] = page.width();
  sidecar["num_labels"] = result.labels.num_labels();
  sidecar["labels_file"] = labels_file.filename().string();
  sidecar["seed"] = g.seed;
  sidecar["k_min"] = k_min;
  sidecar["k_max"] = k_max;
  io::write_json(io::sidecar_path(a.out), sidecar);

  std::string text = a.out.string() + "  k=" + std::to_string(result.k);
  if (result.silhouette) text += "  silhouette=" + std::to_string(*result.silhouette);
  emit(g,
       {{"verb", "segment"},
        {"image", a.out.string()},
        {"sidecar", io::sidecar_path(a.out).string()},
        {"k", result.k},
        {"silhouette", result.silhouette ? json(*result.silhouette) : json(nullptr)}},
       text);
  return 0;
}

struct RescreenArgs {
  fs::path ckpt, image, edits, out;
  std::optional<fs::path> segmentation;
  std::optional<fs::path> line_mask;
};

int run_rescreen(const Globals& g, const RescreenArgs& a) {
  const auto model = load_model(a.ckpt);
  const auto page = io::load_png(a.image);
  const auto lines = page_line_mask(page, a.line_mask);

  std::optional<LabelMap> labels;
  if (a.segmentation) {
    const auto side = io::read_json(*a.segmentation);
    const int h = side.at("height").get<int>(), w = side.at("width").get<int>();
    require(h == page.height() && w == page.width(), "segmentation sidecar does not match the page size");
    labels = io::load_labels_u16(a.segmentation->parent_path() / side.at("labels_file").get<std::string>(), h, w);
  }
  const auto resolver = make_mask_resolver(a.edits.parent_path(), labels ? &*labels : nullptr);
  const auto edits = region_edits_from_json(io::read_json(a.edits), resolver);

  EditSession session(model, page, lines);
  for (const auto& edit : edits) session.apply(edit);
  const auto& preview = session.preview();
  ensure_parent(a.out);
  io::save_png(a.out, preview);

  json stats = json::array();
  const auto latent = session.latent();
  for (const auto& edit : edits) stats.push_back(to_json(region_stats(latent, edit.region)));
  emit(g, {{"verb", "rescreen"}, {"image", a.out.string()}, {"edits", edits.size()}, {"region_stats", stats}},
       a.out.string() + "  edits=" + std::to_string(edits.size()));
  return 0;
}

struct EvalArgs {
  fs::path ckpt, dataset, out;
  std::size_t max_pages = 0;
  bool no_gabor = false;
};

int run_eval(const Globals& g, const EvalArgs& a) {
  BenchmarkOptions options;
  options.max_pages = a.max_pages;
  options.run_gabor = !a.no_gabor;
  const auto report = run_benchmark(a.ckpt, a.dataset, options);
  const json doc = report.to_json();
  ensure_parent(a.out);
  io::write_json(a.out, doc);
  emit(g, doc, report.table());
  return 0;
}

struct ServeArgs {
  std::optional<fs::path> config, ckpt, data_dir, static_dir;
  std::optional<int> port;
  std::optional<std::string> host;
};

std::atomic<bool> g_stop_requested{false};

extern "C" void on_signal(int) { g_stop_requested = true; }

int run_serve(const Globals& g, const ServeArgs& a) {
  GatewayConfig config = a.config ? gateway_config_from_json(io::read_json(*a.config)) : GatewayConfig{};
  apply_environment(config);
  if (a.ckpt) config.checkpoint = *a.ckpt;
  if (a.data_dir) config.data_dir = *a.data_dir;
  if (a.static_dir) config.static_dir = *a.static_dir;
  if (a.port) config.port = *a.port;
  if (a.host) config.host = *a.host;
  if (g.seed_given) config.palette_seed = g.seed;
  if (g.threads > 0) config.threads = g.threads;
  config.validate();

  Gateway gateway(config);
  const int port = gateway.bind();
  emit(g, {{"verb", "serve"}, {"host", config.host}, {"port", port}, {"model_ready", gateway.model_ready()}},
       "listening on http://" + config.host + ":" + std::to_string(port));
  std::cout << std::flush;

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::thread watcher([&] {
    while (!g_stop_requested) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    gateway.stop();
  });
  gateway.listen();
  g_stop_requested = true;
  watcher.join();
  return 0;
}

std::optional<log::Level> parse_level(const std::string& s) {
  if (s == "debug") return log::Level::debug;
  if (s == "info") return log::Level::info;
  if (s == "warn") return log::Level::warn;
  if (s == "error") return log::Level::error;
  if (s == "off") return log::Level::off;
  return std::nullopt;
}

}  // namespace

int dispatch(int argc, char** argv) {
  CLI::App app{"mangatone: screentone-aware manga rescreening"};
  app.require_subcommand(1);
  app.fallthrough();
  app.failure_message(CLI::FailureMessage::help);

  Globals g;
  auto* seed_opt = app.add_option("--seed", g.seed, "Master seed for every random choice")->envname("MANGATONE_SEED");
  app.add_option("--log-level", g.log_level, "debug, info, warn, error or off")
      ->envname("MANGATONE_LOG_LEVEL")
      ->check(CLI::IsMember({"debug", "info", "warn", "error", "off"}));
  app.add_option("--threads", g.threads, "Worker threads (default: available cores)")
      ->envname("MANGATONE_THREADS")
      ->check(CLI::PositiveNumber);
  app.add_flag("--json", g.json_output, "Machine-readable output on stdout");

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dataset with ground truth");
  synth_cmd->add_option("--n", synth.n, "Number of pages")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();
  synth_cmd->add_option("--config", synth.config, "DatasetConfig JSON")->check(CLI::ExistingFile);
  synth_cmd->add_option("--height", synth.height, "Page height");
  synth_cmd->add_option("--width", synth.width, "Page width");
  synth_cmd->add_option("--specs", synth.specs, "Distinct base screentones");
  synth_cmd->add_option("--first-page", synth.first_page, "Index of the first page (disjoint splits)");
  synth_cmd->add_option("--ramp-regions", synth.ramp_regions, "Force this many ramp regions per page");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train the encoder/decoder");
  train_cmd->add_option("--config", train.config, "TrainConfig JSON")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--resume", train.resume, "Checkpoint to resume from")->check(CLI::ExistingFile);
  train_cmd->add_option("--runs-dir", train.runs_dir, "Override the runs directory");

  CodecArgs enc;
  auto* encode_cmd = app.add_subcommand("encode", "Encode a page into its latent");
  encode_cmd->add_option("--ckpt", enc.ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
  encode_cmd->add_option("--image", enc.image, "Page PNG")->required()->check(CLI::ExistingFile);
  encode_cmd->add_option("--out", enc.out, "Latent file (f32 with JSON sidecar)")->required();

  CodecArgs dec;
  auto* decode_cmd = app.add_subcommand("decode", "Decode a latent into a page");
  decode_cmd->add_option("--ckpt", dec.ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
  decode_cmd->add_option("--latent", dec.latent, "Latent file")->required()->check(CLI::ExistingFile);
  decode_cmd->add_option("--out", dec.out, "Output PNG")->required();

  SegmentArgs seg;
  auto* segment_cmd = app.add_subcommand("segment", "Segment a page into screentone regions");
  segment_cmd->add_option("--ckpt", seg.ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
  segment_cmd->add_option("--image", seg.image, "Page PNG")->required()->check(CLI::ExistingFile);
  segment_cmd->add_option("--out", seg.out, "Segmentation PNG; sidecar JSON and labels are written beside it")
      ->required();
  segment_cmd->add_option("--krange", seg.krange, "Candidate cluster counts lo:hi")->capture_default_str();
  segment_cmd->add_option("--line-mask", seg.line_mask, "Line mask PNG (black = line)")->check(CLI::ExistingFile);
  segment_cmd->add_option("--min-region", seg.min_region_px, "Smallest region in pixels")->capture_default_str();

  RescreenArgs res;
  auto* rescreen_cmd = app.add_subcommand("rescreen", "Apply region edits and render the new page");
  rescreen_cmd->add_option("--ckpt", res.ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
  rescreen_cmd->add_option("--image", res.image, "Page PNG")->required()->check(CLI::ExistingFile);
  rescreen_cmd->add_option("--edits", res.edits, "RegionEdit list JSON")->required()->check(CLI::ExistingFile);
  rescreen_cmd->add_option("--out", res.out, "Output PNG")->required();
  rescreen_cmd->add_option("--segmentation", res.segmentation, "Segmentation sidecar for label references")
      ->check(CLI::ExistingFile);
  rescreen_cmd->add_option("--line-mask", res.line_mask, "Line mask PNG (black = line)")->check(CLI::ExistingFile);

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Benchmark a checkpoint on a labelled dataset");
  eval_cmd->add_option("--ckpt", ev.ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--dataset", ev.dataset, "Dataset manifest")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--out", ev.out, "Report JSON")->required();
  eval_cmd->add_option("--max-pages", ev.max_pages, "Evaluate at most this many pages");
  eval_cmd->add_flag("--no-gabor", ev.no_gabor, "Skip the Gabor baseline");

  ServeArgs srv;
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP service");
  serve_cmd->add_option("--config", srv.config, "GatewayConfig JSON")->check(CLI::ExistingFile);
  serve_cmd->add_option("--ckpt", srv.ckpt, "Model checkpoint")->check(CLI::ExistingFile);
  serve_cmd->add_option("--data-dir", srv.data_dir, "Project storage directory");
  serve_cmd->add_option("--port", srv.port, "TCP port (0 picks a free one)")->check(CLI::Range(0, 65535));
  serve_cmd->add_option("--host", srv.host, "Bind address");
  serve_cmd->add_option("--static-dir", srv.static_dir, "Directory served under /app");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  g.seed_given = seed_opt->count() > 0 || std::getenv("MANGATONE_SEED") != nullptr;
  log::set_level(*parse_level(g.log_level));

  try {
    const int threads = g.threads > 0 ? g.threads : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    set_compute_threads(threads);

    if (synth_cmd->parsed()) return run_synth(g, synth);
    if (train_cmd->parsed()) return run_train(g, train);
    if (encode_cmd->parsed()) return run_encode(g, enc);
    if (decode_cmd->parsed()) return run_decode(g, dec);
    if (segment_cmd->parsed()) return run_segment(g, seg);
    if (rescreen_cmd->parsed()) return run_rescreen(g, res);
    if (eval_cmd->parsed()) return run_eval(g, ev);
    if (serve_cmd->parsed()) return run_serve(g, srv);
    std::cerr << app.help();
    return 2;
  } catch (const UsageError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 2;
  } catch (const std::exception& e) {
    log::error(e.what());
    if (g.json_output) std::cout << json{{"error", {{"message", e.what()}}}}.dump() << "\n";
    return 1;
  }
}

}  // namespace mangatone::cli

int main(int argc, char** argv) { return mangatone::cli::dispatch(argc, argv); }
