// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "emforge/model.hpp"
#include "emforge/pipeline.hpp"
#include "emforge/tensor.hpp"

namespace emforge::cli {

// One JSON file with model / train / data / eval sections. Unknown keys are
// errors. Relative paths resolve against the config file's directory.
struct RunConfig {
  ModelConfig model;
  TrainOptions train;
  DType dtype = DType::f32;
  std::filesystem::path train_manifest;
  std::filesystem::path task_registry;
  std::filesystem::path eval_manifest;
  std::filesystem::path report_path;
  bool eval_with_instructions = true;

  void validate() const;
};

RunConfig load_run_config(const std::filesystem::path& path);
RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir);
nlohmann::json to_json(const RunConfig& config);

}  // namespace emforge::cli
