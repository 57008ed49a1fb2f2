#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"

#include "dcl/datagen.hpp"
#include "dcl/train.hpp"

namespace dcl {

// Overrides applied to every DCL block of `arch`.
struct DclOverrides {
  std::optional<std::vector<std::size_t>> branch_filters;
  std::optional<std::size_t> fused_channels;
  std::optional<DclStrategy> strategy;
};

// Experiment description. Keys: arch (string or preset name), dcl,
// dataset (preset id or DatasetConfig object), train, out_dir, and optionally
// data_dir (generated data to read), mnist_dir (source digits when data must
// be synthesized in memory), limit {train, test} (use the first n samples),
// oracle (train per-digit sub-classifiers instead). Unknown keys are rejected.
struct RunConfig {
  std::string arch = "lenet";
  DclOverrides dcl;
  DatasetConfig dataset;
  bool dataset_is_preset = false;
  TrainConfig train;
  std::filesystem::path out_dir = "runs/default";
  std::filesystem::path data_dir, mnist_dir;
  std::size_t limit_train = 0, limit_test = 0;  // 0: everything
  bool oracle = false;
};

// SchemaError on unknown keys or wrong types, UnknownPreset for a bad id.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

// arch resolved against presets, with the DCL overrides applied.
NetworkSpec build_spec(const RunConfig& rc, const Shape& input, std::size_t num_classes);

}  // namespace dcl
