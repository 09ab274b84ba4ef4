#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "p2t/train.hpp"

namespace p2t {

// A complete training run as read from a JSON file. Layout and defaults are
// documented in docs/run_config.md.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SyntheticDataset dataset;
  std::filesystem::path output_dir;

  void validate() const;
};

// Strict parse: unknown keys are rejected at every level and the error names
// the key. dataset.image_size and dataset.num_classes default to the model's.
RunConfig run_config_from_json(std::string_view text);
RunConfig load_run_config(const std::filesystem::path& path);

// Every field after defaulting, pretty-printed. Parsing it yields the same
// RunConfig.
std::string to_json(const RunConfig& rc);

struct RunResult {
  std::vector<TrainRecord> records;
  std::filesystem::path metrics_csv;
  std::filesystem::path checkpoint;
};

// Trains a fresh model seeded by train.seed. Writes config.json before the
// first step, appends a metrics.csv row per step, and saves checkpoint.bin
// at the end. On divergence the rows written so far remain on disk and the
// DivergenceError propagates.
RunResult run_training(const RunConfig& rc, const TrainCallback& on_step = {});

}  // namespace p2t
