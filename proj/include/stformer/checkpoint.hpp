#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "stformer/data.hpp"
#include "stformer/metrics.hpp"
#include "stformer/model.hpp"
#include "stformer/model_config.hpp"

namespace stf {

/// Parameter snapshot of one epoch with everything needed to evaluate it
/// again: the model config, the phenotype statistics and the split.
struct Checkpoint {
  ModelConfig model;
  std::size_t epoch = 0;
  ParameterSet params;  // detached copies
  MetricsReport validation;
  PhenoStats pheno_stats;
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
  nlohmann::json run;  // free-form run metadata (training and data settings)
};

/// Independent value copies of every parameter, marked trainable.
ParameterSet snapshot(const ParameterSet& params);

/// Layout: the 8 bytes "STFCKPT1", a little-endian u64 header length, the
/// JSON header, then each tensor's values as little-endian IEEE doubles in
/// header order.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace stf
