#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "stformer/model_config.hpp"
#include "stformer/training.hpp"

namespace stf {

struct DataPaths {
  std::filesystem::path series_dir;
  std::filesystem::path phenotypic_table;
  std::filesystem::path output_dir = "run";

  bool operator==(const DataPaths&) const = default;
};

/// Everything one `train` invocation needs. On disk this is a JSON object
/// with the sections "model", "train" and "data"; every section and key is
/// optional except the data paths, and unknown keys are errors.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataPaths data;

  bool operator==(const RunConfig&) const = default;
  /// Every violated constraint across all sections.
  std::vector<std::string> validate() const;
};

/// Relative data paths are resolved against `base_dir`. Problems are
/// collected into `errors`. A missing train.segment_length follows model.T.
RunConfig run_config_from_json(const nlohmann::json& j,
                               const std::filesystem::path& base_dir,
                               std::vector<std::string>& errors);

/// Reads, parses and validates a config file; throws ConfigError listing
/// every problem.
RunConfig load_run_config(const std::filesystem::path& path);

nlohmann::json run_config_to_json(const RunConfig& c);

}  // namespace stf
