#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "airr/data.hpp"
#include "airr/losses.hpp"
#include "airr/model.hpp"
#include "airr/networks.hpp"

namespace airr {

/// Everything a training run depends on. Read from a flat `key: value` file;
/// unknown keys are rejected.
struct TrainConfig {
  std::filesystem::path dataset;
  std::filesystem::path out_dir = "runs/airr";
  std::filesystem::path judge;  // required unless lambda4 == 0

  losses::Lambdas lambdas;
  double margin = 0.01;
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int batch_size = 8;
  std::int64_t steps = 20000;
  std::uint64_t seed = 1;
  std::size_t test_count = 1000;     // held out from the dataset, never trained on
  std::uint64_t split_seed = 0;      // DatasetSplit seed
  std::int64_t checkpoint_every = 1000;
  std::int64_t log_every = 1;
  std::int64_t grid_every = 1000;    // 0 disables the preview grid
  ArchConfig arch;

  static TrainConfig parse(std::string_view text);
  static TrainConfig load(const std::filesystem::path& path);
  /// Applies one `key=value` override with the same grammar as the file.
  void set(const std::string& key, const std::string& value);
  /// Throws ConfigError on out-of-range values.
  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
  /// Flat `key: value` text accepted by parse().
  std::string to_text() const;
};

/// Inputs to one step, already on the target device.
struct StepBatch {
  torch::Tensor images;     // [B,3,S,S]
  torch::Tensor masks;      // [B,1,S,S]
  torch::Tensor labels;     // [B,n] source tuple A
  torch::Tensor targets;    // [B,n] sampled target tuple Ā
  torch::Tensor references; // [B,3,S,S] real images carrying Ā
};

/// All mutable training state: networks, optimizers, step counter, RNG.
class Trainer {
 public:
  /// Fresh state. `judge` may be null only when lambda_perceptual == 0.
  Trainer(TrainConfig config, std::shared_ptr<const data::Dataset> dataset, Judge judge);

  /// Restores a checkpoint directory written by save_checkpoint. The stored
  /// schema hash and architecture must match.
  static Trainer resume(const std::filesystem::path& checkpoint, std::shared_ptr<const data::Dataset> dataset,
                        Judge judge, std::optional<TrainConfig> override_config = std::nullopt);

  /// Draws the next batch (sources, targets, references) from the RNG.
  StepBatch next_batch();
  /// One discriminator update followed by one generator update.
  losses::LossReport train_step(const StepBatch& batch);

  /// Runs until config.steps, logging, checkpointing and writing grids.
  /// `on_step` sees every report (used by tests and the CLI progress line).
  void run(const std::function<void(std::int64_t, const losses::LossReport&)>& on_step = {});

  void save_checkpoint(const std::filesystem::path& dir);
  /// original / reconstructed / manipulated / diagnostic rows.
  torch::Tensor preview_grid(std::size_t count);

  std::int64_t step() const { return step_; }
  const TrainConfig& config() const { return config_; }
  AirrModel& model() { return model_; }
  Discriminator& discriminator() { return disc_; }
  const Judge& judge() const { return judge_; }
  const data::DatasetSplit& split() const { return split_; }

 private:
  void init_optimizers();
  [[noreturn]] void fail_non_finite(const char* term, const losses::LossReport& partial);

  TrainConfig config_;
  std::shared_ptr<const data::Dataset> dataset_;
  data::DatasetSplit split_;
  data::ReferenceIndex references_;
  AirrModel model_{nullptr};
  Discriminator disc_{nullptr};
  Judge judge_;
  std::unique_ptr<torch::optim::Adam> opt_g_;
  std::unique_ptr<torch::optim::Adam> opt_d_;
  data::Rng rng_;
  std::int64_t step_ = 0;
};

/// Loads the generator side of a checkpoint for inference. Checks the schema
/// hash against `expected_schema` when given.
struct LoadedCheckpoint {
  AirrModel model{nullptr};
  nlohmann::json manifest;
};
LoadedCheckpoint load_model_checkpoint(const std::filesystem::path& dir, const SchemaPtr& expected_schema = nullptr);

/// One cell of a lambda grid with its averaged final losses.
struct SweepRow {
  losses::Lambdas lambdas;
  losses::LossReport mean_tail;  // mean over the last `tail` steps
  nlohmann::json to_json() const;
};

/// Parses "lambda1=0,0.25;lambda2=0.125,0.5" into a grid.
std::map<std::string, std::vector<double>> parse_sweep_grid(const std::string& text);

/// Trains one short run per grid cell (cartesian product) and appends one
/// JSON row per cell to out_dir/sweep.jsonl.
std::vector<SweepRow> run_sweep(const TrainConfig& base, const std::map<std::string, std::vector<double>>& grid,
                                std::shared_ptr<const data::Dataset> dataset, const Judge& judge,
                                std::int64_t tail = 20);

}  // namespace airr
