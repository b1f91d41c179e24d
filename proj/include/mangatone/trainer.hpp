// SPDX-License-Identifier: Apache-2.0
//
// Two-phase adversarial training of the encoder/decoder pair. Phase 1 draws
// synthetic (labeled) batches only; phase 2 alternates synthetic and
// unlabeled batches. Every source of randomness in a step is derived from
// (seed, step), so a run resumed from a checkpoint continues bit-identically.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mangatone/losses.hpp"
#include "mangatone/network.hpp"
#include "mangatone/raster.hpp"

namespace mangatone {

struct TrainConfig {
  std::string name = "run";
  std::filesystem::path runs_dir = "runs";
  std::filesystem::path synthetic_manifest;
  std::optional<std::filesystem::path> unlabeled_manifest;
  ModelConfig model{};
  int batch_size = 8;
  double learning_rate = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double grad_clip = 10.0;
  int crop_size = 256;
  std::int64_t phase1_steps = 1000;
  std::int64_t phase2_steps = 1000;
  std::int64_t checkpoint_every = 500;
  std::int64_t log_every = 10;
  std::uint64_t seed = 0;
  LossWeights weights{};
  /// The KL weight ramps linearly from 0 to weights.kl over this many steps.
  std::int64_t kl_warmup_steps = 0;

  void validate() const;
  /// Loss weights in effect at `step`.
  LossWeights weights_at(std::int64_t step) const;
  std::int64_t total_steps() const { return phase1_steps + phase2_steps; }
  /// 1 for steps in the synthetic-only phase, 2 afterwards.
  int phase_of(std::int64_t step) const { return step < phase1_steps ? 1 : 2; }
};

nlohmann::json to_json(const TrainConfig& config);
/// Relative paths in the document resolve against `base_dir`.
TrainConfig train_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});

/// One aligned training example. `labels` is absent for unlabeled pages.
struct Sample {
  GrayImage image;
  IntensityMap intensity;
  std::optional<LabelMap> labels;
  LineMask line_mask;
};

using Batch = std::vector<Sample>;

/// Random crop (mirror-padding pages smaller than the crop) and horizontal
/// flip with probability 0.5, applied identically to every raster.
Sample augment(const Sample& sample, int crop_size, Rng& rng);
/// Deterministic form: crop window at (y0, x0) of the padded page, optional flip.
Sample crop_and_flip(const Sample& sample, int crop_size, int y0, int x0, bool flip);

/// In-memory training pages.
class SampleSource {
 public:
  /// Labeled pages from a synthetic dataset manifest.
  static SampleSource synthetic(const std::filesystem::path& manifest);
  /// Pages with labels dropped; intensity targets come from TV smoothing of
  /// the page and line masks from the dataset when present.
  static SampleSource unlabeled(const std::filesystem::path& manifest);
  explicit SampleSource(std::vector<Sample> samples);

  std::size_t size() const { return samples_.size(); }
  const Sample& operator[](std::size_t i) const { return samples_[i]; }

 private:
  std::vector<Sample> samples_;
};

struct TrainerState;

class Trainer {
 public:
  /// Fresh parameters from config.seed. Sources may be empty when batches
  /// are supplied directly to step().
  Trainer(const TrainConfig& config, std::shared_ptr<const SampleSource> synthetic = nullptr,
          std::shared_ptr<const SampleSource> unlabeled = nullptr);
  /// Continues from a checkpoint written by save_checkpoint().
  static Trainer resume(const TrainConfig& config, const std::filesystem::path& checkpoint,
                        std::shared_ptr<const SampleSource> synthetic = nullptr,
                        std::shared_ptr<const SampleSource> unlabeled = nullptr);
  ~Trainer();
  Trainer(Trainer&&) noexcept;
  Trainer& operator=(Trainer&&) noexcept;

  /// The batch scheduled for the current step.
  Batch next_batch() const;
  /// Called between the discriminator update and the encoder/decoder update.
  using Observer = std::function<void(const Model&)>;
  /// One discriminator update followed by one encoder/decoder update.
  /// Throws TrainingAborted when a loss is not finite; the encoder/decoder
  /// are left untouched in that case.
  LossReport step(const Batch& batch, const Observer& between_updates = {});
  /// next_batch() then step().
  LossReport step();

  std::int64_t step_count() const;
  int phase() const;
  const TrainConfig& config() const;
  /// Shares parameters with the trainer; clone() for a frozen snapshot.
  Model model() const;

  void save_checkpoint(const std::filesystem::path& path) const;

 private:
  explicit Trainer(std::unique_ptr<TrainerState> state);
  std::unique_ptr<TrainerState> state_;
};

std::filesystem::path checkpoint_path(const TrainConfig& config, std::int64_t step);

struct TrainingResult {
  std::filesystem::path final_checkpoint;
  std::vector<LossReport> reports;  // every logged step
};

/// Loads the manifests, trains to config.total_steps(), writes checkpoints to
/// runs/{name}/ckpt_{step} and JSON-lines logs to runs/{name}/train.jsonl.
/// On abort the last good checkpoint stays on disk and the error propagates.
TrainingResult run_training(const TrainConfig& config, const std::optional<std::filesystem::path>& resume = std::nullopt,
                            const std::function<void(const LossReport&)>& on_log = {});

}  // namespace mangatone
