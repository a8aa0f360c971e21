#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <vector>

#include <json.hpp>

#include "matten/diffusion.hpp"
#include "matten/model.hpp"
#include "matten/sprites.hpp"

namespace matten {

struct TrainConfig {
  ModelConfig model;
  SpriteSpec data;
  std::size_t steps = 500;
  std::size_t batch = 8;
  double lr = 1e-4;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8, weight_decay = 0.0;
  diffusion::EmaSchedule ema;
  double vlb_weight = diffusion::kVlbWeight;
  bool flip = true;
  /// Writes a checkpoint every this many steps during run(); 0 disables.
  std::size_t checkpoint_every = 0;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
/// Unknown keys are a ConfigError.
void from_json(const nlohmann::json& j, TrainConfig& c);
TrainConfig load_train_config(const std::filesystem::path& path);

struct StepStats {
  std::size_t step = 0;  // 1-based count after the update
  double simple = 0.0, vlb = 0.0, total = 0.0;
};

/// One training batch, as drawn for a given step.
struct Batch {
  Tensor z0, eps;  // [B, F, H, W, C] in the model dtype
  std::vector<std::size_t> t, labels;
  std::vector<bool> flipped;
  std::vector<std::size_t> index;
};

/// AdamW on the hybrid loss with an EMA of the weights. Every random draw of
/// step k comes from a generator seeded by (seed, k), so a resumed run
/// replays the uninterrupted one.
class Trainer {
 public:
  explicit Trainer(TrainConfig config);

  /// Reads `dir`/checkpoint.json and `dir`/tensors.mttn. Problems raise
  /// LoadError naming the file and field.
  static Trainer load(const std::filesystem::path& dir);
  void save(const std::filesystem::path& dir) const;

  Batch draw_batch(std::size_t step) const;
  /// One optimizer step. A non-finite loss, or a forward pass that fails,
  /// writes the batch to `failure_dir`/failed_batch.mttn (when set) and
  /// raises NumericError.
  StepStats step();
  /// Steps until `config().steps`, logging CSV rows to `log` and
  /// checkpointing into `out` on the configured cadence.
  void run(std::ostream* log = nullptr, const std::optional<std::filesystem::path>& out = {},
           const std::function<void(const StepStats&)>& on_step = {});

  const TrainConfig& config() const { return config_; }
  const MattenModel& model() const { return model_; }
  const std::vector<NamedTensor>& ema() const { return ema_; }
  const SpriteDataset& data() const { return data_; }
  const diffusion::Schedule& schedule() const { return schedule_; }
  std::size_t step_count() const { return step_; }
  void set_failure_dir(std::filesystem::path dir) { failure_dir_ = std::move(dir); }
  /// Moves the stopping point of run(); the rest of the config is fixed.
  void set_total_steps(std::size_t steps) { config_.steps = steps; }

 private:
  TrainConfig config_;
  MattenModel model_;
  SpriteDataset data_;
  diffusion::Schedule schedule_;
  std::vector<NamedTensor> ema_;
  std::vector<std::vector<double>> adam_m_, adam_v_;
  std::size_t step_ = 0;
  std::filesystem::path failure_dir_;
};

inline constexpr const char* kLossCsvHeader = "step,loss_simple,loss_vlb,total";

/// Copies values into the model's parameters, matched by name and shape.
void load_parameters(const MattenModel& model, std::span<const NamedTensor> values);

struct SampleRequest {
  std::size_t count = 4;
  std::uint64_t seed = 0;
  /// Respaced sampler length; 0 runs every training step.
  std::size_t steps = 0;
  /// Class of each sample; empty cycles through the classes (or none).
  std::vector<std::size_t> classes;
  std::size_t batch = 8;
};

struct SampleSet {
  Tensor videos;  // [count, F, H, W, C]; undefined for zero samples
  std::vector<std::size_t> classes;
};

/// Samples with the EMA weights of `trainer`'s model.
SampleSet sample_ema(const Trainer& trainer, const SampleRequest& request);

/// samples.mttn (tensor "samples" plus "classes" when non-empty; an empty
/// archive for zero samples) and one PNG frame strip per video.
void write_samples(const std::filesystem::path& dir, const SampleSet& samples, bool png = true);

}  // namespace matten
