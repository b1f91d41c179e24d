// SPDX-License-Identifier: Apache-2.0
#include "mangatone/trainer.hpp"

#include <cmath>
#include <fstream>

#include "mangatone/dataset.hpp"
#include "mangatone/error.hpp"
#include "mangatone/log.hpp"
#include "mangatone/imgproc.hpp"
#include "mangatone/intensity.hpp"
#include "mangatone/io.hpp"
#include "mangatone/nn/losses.hpp"
#include "mangatone/nn/modules.hpp"

namespace mangatone {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  model.validate();
  weights.validate();
  require(!name.empty(), "train config: name must not be empty");
  require(batch_size >= 1, "train config: batch_size must be at least 1");
  require(learning_rate > 0.0, "train config: learning_rate must be positive");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "train config: betas must lie in [0, 1)");
  require(grad_clip > 0.0, "train config: grad_clip must be positive");
  require(crop_size >= 1 && crop_size % model.input_multiple() == 0,
          "train config: crop_size must be a multiple of " + std::to_string(model.input_multiple()));
  require(phase1_steps >= 0 && phase2_steps >= 0 && total_steps() >= 1, "train config: need at least one step");
  require(checkpoint_every >= 1 && log_every >= 1, "train config: checkpoint_every and log_every must be positive");
  require(kl_warmup_steps >= 0, "train config: kl_warmup_steps must be non-negative");
}

LossWeights TrainConfig::weights_at(std::int64_t step) const {
  LossWeights w = weights;
  if (kl_warmup_steps > 0 && step < kl_warmup_steps)
    w.kl *= static_cast<double>(step) / static_cast<double>(kl_warmup_steps);
  return w;
}

nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j{{"name", c.name},
                   {"runs_dir", c.runs_dir.string()},
                   {"synthetic_manifest", c.synthetic_manifest.string()},
                   {"model", to_json(c.model)},
                   {"batch_size", c.batch_size},
                   {"learning_rate", c.learning_rate},
                   {"betas", {c.beta1, c.beta2}},
                   {"grad_clip", c.grad_clip},
                   {"crop_size", c.crop_size},
                   {"phase1_steps", c.phase1_steps},
                   {"phase2_steps", c.phase2_steps},
                   {"checkpoint_every", c.checkpoint_every},
                   {"log_every", c.log_every},
                   {"seed", c.seed},
                   {"weights", to_json(c.weights)},
                   {"kl_warmup_steps", c.kl_warmup_steps}};
  j["unlabeled_manifest"] = c.unlabeled_manifest ? nlohmann::json(c.unlabeled_manifest->string()) : nlohmann::json();
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j, const fs::path& base_dir) {
  auto resolve = [&](const std::string& p) {
    fs::path path(p);
    return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
  };
  TrainConfig c;
  try {
    c.name = j.value("name", c.name);
    c.runs_dir = resolve(j.value("runs_dir", c.runs_dir.string()));
    if (j.contains("synthetic_manifest")) c.synthetic_manifest = resolve(j.at("synthetic_manifest").get<std::string>());
    if (j.contains("unlabeled_manifest") && !j["unlabeled_manifest"].is_null())
      c.unlabeled_manifest = resolve(j.at("unlabeled_manifest").get<std::string>());
    if (j.contains("model")) c.model = model_config_from_json(j["model"]);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    if (j.contains("betas")) {
      c.beta1 = j["betas"].at(0).get<double>();
      c.beta2 = j["betas"].at(1).get<double>();
    }
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.crop_size = j.value("crop_size", c.crop_size);
    c.phase1_steps = j.value("phase1_steps", c.phase1_steps);
    c.phase2_steps = j.value("phase2_steps", c.phase2_steps);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.log_every = j.value("log_every", c.log_every);
    c.seed = j.value("seed", c.seed);
    if (j.contains("weights")) c.weights = loss_weights_from_json(j["weights"]);
    c.kl_warmup_steps = j.value("kl_warmup_steps", c.kl_warmup_steps);
  } catch (const nlohmann::json::exception& e) {
    throw ContractViolation(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

template <typename R>
R crop_raster(const R& src, int crop, int y0, int x0, bool flip) {
  R out(Shape{src.channels(), crop, crop});
  for (int c = 0; c < src.channels(); ++c)
    for (int y = 0; y < crop; ++y)
      for (int x = 0; x < crop; ++x) {
        const int sx = flip ? x0 + crop - 1 - x : x0 + x;
        out(c, y, x) = src(c, imgproc::reflect(y0 + y, src.height()), imgproc::reflect(sx, src.width()));
      }
  return out;
}

}  // namespace

Sample crop_and_flip(const Sample& s, int crop, int y0, int x0, bool flip) {
  require(crop >= 1, "crop size must be positive");
  require(s.image.shape() == s.intensity.shape() && s.image.shape().same_plane(s.line_mask.shape()),
          "sample rasters are misaligned");
  Sample out;
  out.image = crop_raster(s.image, crop, y0, x0, flip);
  out.intensity = crop_raster(s.intensity, crop, y0, x0, flip);
  out.line_mask = crop_raster(s.line_mask, crop, y0, x0, flip);
  if (s.labels) {
    require(s.labels->shape().same_plane(s.image.shape()), "sample labels are misaligned");
    out.labels = LabelMap(crop_raster(s.labels->grid(), crop, y0, x0, flip), s.labels->num_labels());
  }
  return out;
}

Sample augment(const Sample& s, int crop, Rng& rng) {
  const int h = std::max(s.image.height(), crop), w = std::max(s.image.width(), crop);
  const int y0 = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(h - crop + 1)));
  const int x0 = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(w - crop + 1)));
  const bool flip = uniform01(rng) < 0.5;
  return crop_and_flip(s, crop, y0, x0, flip);
}

SampleSource::SampleSource(std::vector<Sample> samples) : samples_(std::move(samples)) {}

SampleSource SampleSource::synthetic(const fs::path& manifest_path) {
  const auto manifest = load_manifest(manifest_path);
  std::vector<Sample> samples;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    auto page = load_page(manifest, i);
    samples.push_back({to_gray(page.image), std::move(page.intensity), std::move(page.labels), std::move(page.line_mask)});
  }
  if (samples.empty()) throw IoError(manifest_path.string() + ": dataset has no pages");
  return SampleSource(std::move(samples));
}

SampleSource SampleSource::unlabeled(const fs::path& manifest_path) {
  const auto manifest = load_manifest(manifest_path);
  std::vector<Sample> samples;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    auto page = load_page(manifest, i);
    auto gray = to_gray(page.image);
    auto intensity = extract_intensity(gray).intensity;
    samples.push_back({std::move(gray), std::move(intensity), std::nullopt, std::move(page.line_mask)});
  }
  if (samples.empty()) throw IoError(manifest_path.string() + ": dataset has no pages");
  return SampleSource(std::move(samples));
}

struct TrainerState {
  TrainConfig config;
  Model model;
  std::unique_ptr<torch::optim::Adam> opt_g;
  std::unique_ptr<torch::optim::Adam> opt_d;
  std::int64_t step = 0;
  std::shared_ptr<const SampleSource> synthetic;
  std::shared_ptr<const SampleSource> unlabeled;

  TrainerState(const TrainConfig& c, Model m) : config(c), model(std::move(m)) {
    auto options = torch::optim::AdamOptions(c.learning_rate).betas({c.beta1, c.beta2});
    opt_g = std::make_unique<torch::optim::Adam>(model.impl().generator_parameters(), options);
    opt_d = std::make_unique<torch::optim::Adam>(model.impl().discriminator_parameters(), options);
  }
};

namespace {

torch::Tensor stack_images(const Batch& batch) {
  std::vector<torch::Tensor> parts;
  for (const auto& s : batch) parts.push_back(nn::to_tensor(s.image));
  return torch::cat(parts, 0);
}

torch::Tensor stack_intensity(const Batch& batch) {
  std::vector<torch::Tensor> parts;
  for (const auto& s : batch) parts.push_back(nn::to_tensor(retag<FeatureRaster>(s.intensity)));
  return torch::cat(parts, 0);
}

void set_requires_grad(const std::vector<torch::Tensor>& params, bool on) {
  for (auto p : params) p.requires_grad_(on);
}

// Optimizer state is keyed by the parameter's name in the checkpoint.
std::vector<std::pair<std::string, torch::Tensor>> named(torch::nn::Module& m, const std::string& prefix) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (auto& item : m.named_parameters()) out.emplace_back(prefix + "." + item.key(), item.value());
  return out;
}

void export_adam(torch::optim::Adam& opt, const std::vector<std::pair<std::string, torch::Tensor>>& params,
                 CheckpointFile& file, nlohmann::json& steps) {
  for (const auto& [name, p] : params) {
    auto it = opt.state().find(p.unsafeGetTensorImpl());
    if (it == opt.state().end()) continue;
    auto& st = static_cast<torch::optim::AdamParamState&>(*it->second);
    steps[name] = st.step();
    for (const auto& [suffix, t] : {std::pair{"exp_avg", st.exp_avg()}, std::pair{"exp_avg_sq", st.exp_avg_sq()}}) {
      auto c = t.contiguous();
      TensorBlob blob;
      blob.shape.assign(c.sizes().begin(), c.sizes().end());
      blob.data.assign(c.data_ptr<float>(), c.data_ptr<float>() + c.numel());
      file.tensors.emplace("optim/" + name + "/" + suffix, std::move(blob));
    }
  }
}

void import_adam(torch::optim::Adam& opt, const std::vector<std::pair<std::string, torch::Tensor>>& params,
                 const CheckpointFile& file, const nlohmann::json& steps) {
  for (const auto& [name, p] : params) {
    if (!steps.contains(name)) continue;
    auto load = [&](const std::string& suffix) {
      const auto it = file.tensors.find("optim/" + name + "/" + suffix);
      if (it == file.tensors.end()) throw IoError("checkpoint lacks optimizer tensor for '" + name + "'");
      auto t = torch::empty(p.sizes(), torch::kFloat32);
      if (static_cast<std::int64_t>(it->second.data.size()) != t.numel())
        throw IoError("checkpoint optimizer tensor for '" + name + "' has the wrong size");
      std::copy(it->second.data.begin(), it->second.data.end(), t.data_ptr<float>());
      return t;
    };
    auto st = std::make_unique<torch::optim::AdamParamState>();
    st->step(steps[name].get<std::int64_t>());
    st->exp_avg(load("exp_avg"));
    st->exp_avg_sq(load("exp_avg_sq"));
    opt.state()[p.unsafeGetTensorImpl()] = std::move(st);
  }
}

}  // namespace

Trainer::Trainer(std::unique_ptr<TrainerState> state) : state_(std::move(state)) {}

Trainer::Trainer(const TrainConfig& config, std::shared_ptr<const SampleSource> synthetic,
                 std::shared_ptr<const SampleSource> unlabeled) {
  config.validate();
  state_ = std::make_unique<TrainerState>(config, Model(config.model, config.seed));
  state_->synthetic = std::move(synthetic);
  state_->unlabeled = std::move(unlabeled);
}

Trainer Trainer::resume(const TrainConfig& config, const fs::path& checkpoint,
                        std::shared_ptr<const SampleSource> synthetic, std::shared_ptr<const SampleSource> unlabeled) {
  config.validate();
  const auto file = read_checkpoint(checkpoint);
  auto model = import_model(file);
  if (!(model.config() == config.model))
    throw ContractViolation(checkpoint.string() + ": model config differs from the training config");
  auto state = std::make_unique<TrainerState>(config, std::move(model));
  state->step = file.header.value("step", std::int64_t{0});
  const auto steps = file.header.value("optim_steps", nlohmann::json::object());
  auto& impl = state->model.impl();
  auto g = named(*impl.encoder, "encoder");
  auto d = named(*impl.decoder, "decoder");
  g.insert(g.end(), d.begin(), d.end());
  import_adam(*state->opt_g, g, file, steps);
  import_adam(*state->opt_d, named(*impl.discriminator, "discriminator"), file, steps);
  state->synthetic = std::move(synthetic);
  state->unlabeled = std::move(unlabeled);
  return Trainer(std::move(state));
}

Trainer::~Trainer() = default;
Trainer::Trainer(Trainer&&) noexcept = default;
Trainer& Trainer::operator=(Trainer&&) noexcept = default;

std::int64_t Trainer::step_count() const { return state_->step; }
int Trainer::phase() const { return state_->config.phase_of(state_->step); }
const TrainConfig& Trainer::config() const { return state_->config; }
Model Trainer::model() const { return state_->model; }

Batch Trainer::next_batch() const {
  const auto& c = state_->config;
  const std::int64_t s = state_->step;
  const bool use_unlabeled = c.phase_of(s) == 2 && (s - c.phase1_steps) % 2 == 1 && state_->unlabeled != nullptr &&
                             state_->unlabeled->size() > 0;
  const SampleSource* source = use_unlabeled ? state_->unlabeled.get() : state_->synthetic.get();
  require(source != nullptr && source->size() > 0, "trainer has no training pages");
  Rng rng(derive_seed(c.seed, 2 * static_cast<std::uint64_t>(s)));
  Batch batch;
  for (int i = 0; i < c.batch_size; ++i) {
    const auto& sample = (*source)[uniform_index(rng, source->size())];
    batch.push_back(augment(sample, c.crop_size, rng));
  }
  return batch;
}

LossReport Trainer::step() { return step(next_batch()); }

LossReport Trainer::step(const Batch& batch, const Observer& between_updates) {
  require(!batch.empty(), "train_step: empty batch");
  auto& st = *state_;
  const auto& cfg = st.config;
  const auto w = cfg.weights_at(st.step);
  auto& impl = st.model.impl();
  const int h = batch.front().image.height(), wd = batch.front().image.width();
  const int m = cfg.model.input_multiple();
  require(h % m == 0 && wd % m == 0, "train_step: sample size must be a multiple of " + std::to_string(m));
  for (const auto& s : batch) {
    require(s.image.height() == h && s.image.width() == wd, "train_step: samples in a batch must share a size");
    require(s.intensity.shape() == s.image.shape() && s.line_mask.shape().same_plane(s.image.shape()),
            "train_step: sample rasters are misaligned");
  }
  const auto n = static_cast<std::int64_t>(batch.size());

  Rng rng(derive_seed(cfg.seed, 2 * static_cast<std::uint64_t>(st.step) + 1));
  const auto x = stack_images(batch);
  const auto target_itn = stack_intensity(batch);
  auto labels = torch::zeros({n, h, wd}, torch::kInt64);
  auto fcons_weight = torch::zeros({n, 1, h, wd}, torch::kFloat32);
  std::vector<torch::Tensor> random_itn;
  for (std::int64_t i = 0; i < n; ++i) {
    const auto& s = batch[static_cast<std::size_t>(i)];
    if (s.labels) {
      auto* lp = labels[i].data_ptr<std::int64_t>();
      auto* wp = fcons_weight[i].data_ptr<float>();
      for (std::size_t k = 0; k < s.image.size(); ++k) {
        lp[k] = s.labels->grid()[k];
        wp[k] = s.line_mask[k] != 0 ? 1.0f : 0.0f;
      }
    }
    random_itn.push_back(nn::to_tensor(retag<FeatureRaster>(
        sample_random_intensity(rng, s.labels ? &*s.labels : nullptr, h, wd))));
  }
  const auto rand_itn = torch::cat(random_itn, 0);
  auto eps = torch::empty({n, kTypeChannels, h, wd}, torch::kFloat32);
  for (auto* p = eps.data_ptr<float>(), *end = p + eps.numel(); p != end; ++p)
    *p = static_cast<float>(standard_normal(rng));

  // Generator forward: reconstruction path and random-intensity path.
  const auto enc = impl.encoder->forward(x);
  const auto z = enc.mu + enc.log_sigma.exp() * eps;
  const auto x_hat = impl.decoder->forward(enc.intensity, z);
  const auto x_rand = impl.decoder->forward(rand_itn, z);
  const auto enc_rand = impl.encoder->forward(x_rand);
  const auto rec = nn::mse(x_hat, x);
  const auto itn = nn::mse(enc.intensity, target_itn);
  const auto kl = nn::kl_divergence(enc.mu, enc.log_sigma);
  const auto fcons = nn::feature_consistency(enc.mu, labels, fcons_weight);
  const auto frec = nn::mse(torch::cat({enc_rand.intensity, enc_rand.mu}, 1), torch::cat({rand_itn, z.detach()}, 1));

  LossTerms terms;
  terms.rec = rec.item<double>();
  terms.itn = itn.item<double>();
  terms.kl = kl.item<double>();
  terms.fcons = fcons.item<double>();
  terms.frec = frec.item<double>();

  // Discriminator update on real, reconstructed and random-path images.
  {
    const auto adv = nn::adversarial_from_logits(impl.discriminator->forward(x),
                                                 impl.discriminator->forward(x_hat.detach()),
                                                 impl.discriminator->forward(x_rand.detach()));
    terms.adv_d = adv.discriminator.item<double>();
    if (!std::isfinite(terms.adv_d)) total_loss(terms, w, st.step);
    if (w.adv > 0.0) {
      st.opt_d->zero_grad();
      adv.discriminator.backward();
      torch::nn::utils::clip_grad_norm_(impl.discriminator_parameters(), cfg.grad_clip);
      st.opt_d->step();
    }
  }
  if (between_updates) between_updates(st.model);

  // Encoder/decoder update; the discriminator is frozen for this pass.
  const auto d_params = impl.discriminator_parameters();
  set_requires_grad(d_params, false);
  const auto adv_g = nn::adversarial_from_logits(torch::zeros({1}), impl.discriminator->forward(x_hat),
                                                 impl.discriminator->forward(x_rand))
                         .generator;
  set_requires_grad(d_params, true);
  terms.adv_g = adv_g.item<double>();
  const auto report = total_loss(terms, w, st.step);

  if (!w.all_zero()) {
    auto total = torch::zeros({}, torch::kFloat32);
    for (const auto& [weight, term] : {std::pair{w.rec, rec}, std::pair{w.adv, adv_g}, std::pair{w.itn, itn},
                                       std::pair{w.kl, kl}, std::pair{w.fcons, fcons}, std::pair{w.frec, frec}})
      if (weight > 0.0) total = total + weight * term;
    st.opt_g->zero_grad();
    total.backward();
    torch::nn::utils::clip_grad_norm_(impl.generator_parameters(), cfg.grad_clip);
    st.opt_g->step();
  }
  ++st.step;
  return report;
}

void Trainer::save_checkpoint(const fs::path& path) const {
  auto& impl = state_->model.impl();
  auto file = export_model(state_->model);
  file.header["step"] = state_->step;
  file.header["phase"] = phase();
  file.header["train_config"] = to_json(state_->config);
  nlohmann::json steps = nlohmann::json::object();
  auto g = named(*impl.encoder, "encoder");
  auto d = named(*impl.decoder, "decoder");
  g.insert(g.end(), d.begin(), d.end());
  export_adam(*state_->opt_g, g, file, steps);
  export_adam(*state_->opt_d, named(*impl.discriminator, "discriminator"), file, steps);
  file.header["optim_steps"] = steps;
  write_checkpoint(path, file);
}

fs::path checkpoint_path(const TrainConfig& config, std::int64_t step) {
  return config.runs_dir / config.name / ("ckpt_" + std::to_string(step));
}

TrainingResult run_training(const TrainConfig& config, const std::optional<fs::path>& resume,
                            const std::function<void(const LossReport&)>& on_log) {
  config.validate();
  if (!fs::exists(config.synthetic_manifest))
    throw IoError("synthetic manifest not found: " + config.synthetic_manifest.string());
  auto synthetic = std::make_shared<const SampleSource>(SampleSource::synthetic(config.synthetic_manifest));
  std::shared_ptr<const SampleSource> unlabeled;
  if (config.unlabeled_manifest) {
    if (!fs::exists(*config.unlabeled_manifest))
      throw IoError("unlabeled manifest not found: " + config.unlabeled_manifest->string());
    log::info("extracting intensity targets for unlabeled pages");
    unlabeled = std::make_shared<const SampleSource>(SampleSource::unlabeled(*config.unlabeled_manifest));
  } else if (config.phase2_steps > 0) {
    log::warn("no unlabeled manifest; phase 2 uses synthetic batches only");
  }

  Trainer trainer = resume ? Trainer::resume(config, *resume, synthetic, unlabeled)
                           : Trainer(config, synthetic, unlabeled);
  const fs::path run_dir = config.runs_dir / config.name;
  fs::create_directories(run_dir);
  io::write_json(run_dir / "config.json", to_json(config));
  std::ofstream log(run_dir / "train.jsonl", resume ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError("cannot open training log in " + run_dir.string());

  TrainingResult result;
  std::int64_t last_saved = resume ? trainer.step_count() : -1;
  while (trainer.step_count() < config.total_steps()) {
    const auto report = trainer.step();
    const auto done = trainer.step_count();
    if (report.step % config.log_every == 0 || done == config.total_steps()) {
      log << report.to_json_line() << '\n' << std::flush;
      result.reports.push_back(report);
      if (on_log) on_log(report);
    }
    if (done % config.checkpoint_every == 0 || done == config.total_steps()) {
      trainer.save_checkpoint(checkpoint_path(config, done));
      last_saved = done;
    }
  }
  if (last_saved != trainer.step_count()) trainer.save_checkpoint(checkpoint_path(config, trainer.step_count()));
  result.final_checkpoint = checkpoint_path(config, trainer.step_count());
  io::write_bytes(run_dir / "latest", result.final_checkpoint.filename().string() + "\n");
  return result;
}

}  // namespace mangatone
