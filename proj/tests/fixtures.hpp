#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>

#include <unistd.h>

#include "airr/data.hpp"
#include "airr/networks.hpp"
#include "airr/trainer.hpp"

namespace airr::testing {

// Small network sizes so the trainer/evaluator tests run in seconds.
inline ArchConfig tiny_arch() {
  ArchConfig a;
  a.base_channels = 4;
  a.fg_channels = 8;
  a.bg_channels = 4;
  a.res_blocks = 1;
  a.remover_layers = 2;
  a.disc_channels = 4;
  a.judge_channels = 4;
  a.judge_features = 16;
  return a;
}

inline std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("airr_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// ShapeSet with `count` items, generated once per process.
inline std::shared_ptr<const data::Dataset> small_dataset(std::size_t count = 240) {
  static std::map<std::size_t, std::shared_ptr<const data::Dataset>> cache;
  auto& slot = cache[count];
  if (!slot) {
    const auto dir = scratch("dataset_" + std::to_string(count) + "_" + std::to_string(::getpid()));
    data::generate_shapeset(dir, 11, count, 1);
    slot = std::make_shared<const data::Dataset>(data::Dataset::load(dir));
  }
  return slot;
}

inline Judge frozen_judge(const ArchConfig& arch, const SchemaPtr& schema, std::uint64_t seed = 5) {
  torch::manual_seed(seed);
  Judge j(arch, schema);
  j->freeze();
  return j;
}

inline TrainConfig tiny_config(const std::filesystem::path& out_dir) {
  TrainConfig c;
  c.out_dir = out_dir;
  c.arch = tiny_arch();
  c.batch_size = 4;
  c.steps = 10;
  c.test_count = 40;
  c.checkpoint_every = 0;
  c.grid_every = 0;
  return c;
}

}  // namespace airr::testing
