#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "stformer/checkpoint.hpp"
#include "stformer/data.hpp"
#include "stformer/metrics.hpp"
#include "stformer/model.hpp"

namespace stf {

enum class SelectionMetric { acc, auc };

struct TrainConfig {
  std::size_t epochs = 30;
  double learning_rate = 1e-5;
  std::size_t batch_size = 128;
  std::size_t segment_length = 60;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  SelectionMetric selection_metric = SelectionMetric::acc;
  double val_fraction = 0.2;

  bool operator==(const TrainConfig&) const = default;
  std::vector<std::string> validate() const;
};

std::string to_string(SelectionMetric m);
nlohmann::json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j,
                                   std::vector<std::string>& errors,
                                   const std::string& prefix = "train");

inline constexpr double kProbClamp = 1e-7;

/// -[y ln p + (1 - y) ln(1 - p)] with p clamped to [1e-7, 1 - 1e-7]; the
/// gradient is zero where the clamp is active. `prob` holds one element.
Tensor bce_loss(const Tensor& prob, double label);

using GradientMap = std::map<std::string, std::vector<double>>;

struct AdamState {
  GradientMap m;
  GradientMap v;
  std::uint64_t t = 0;
};

/// Accumulated gradient of every parameter (zeros where none was recorded).
GradientMap gradients_of(const ParameterSet& params);

/// One bias-corrected Adam update using cfg's learning rate, betas and eps.
void adam_step(ParameterSet& params, const GradientMap& grads,
               AdamState& state, const TrainConfig& cfg);

/// Training example whose segment is cropped afresh every epoch.
struct TrainSubject {
  std::string subject_id;
  const Matrix* series = nullptr;
  std::vector<double> pheno;
  int label = 0;
};

struct EvalResult {
  MetricsReport report;
  std::vector<double> probs;
};

/// Eval-mode forward over every sample, in order; parameters are untouched.
EvalResult evaluate(const Model& model, const std::vector<SubjectSample>& samples,
                    double threshold = 0.5);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  MetricsReport val;
};

struct TrainResult {
  Checkpoint best;
  std::vector<EpochRecord> history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Epoch e draws crop offsets from stream ("augmentation", e) in subject
/// order, shuffles with ("shuffle", e) and drops out with ("dropout", e).
/// Each batch averages the per-sample loss, keeping a short last batch.
/// The returned checkpoint is the epoch with the best validation metric,
/// ties going to the other metric and then to the earlier epoch; with zero
/// epochs it holds the initial parameters. Only model, epoch, params and
/// validation of the checkpoint are filled.
TrainResult train(const ModelConfig& model_config, const TrainConfig& cfg,
                  const ParameterSet& initial,
                  const std::vector<TrainSubject>& train_set,
                  const std::vector<SubjectSample>& val_set,
                  const EpochCallback& on_epoch = {});

/// Center-cropped, phenotype-encoded samples for the given subjects.
std::vector<SubjectSample> center_samples(const Dataset& data,
                                          const std::vector<std::string>& ids,
                                          const PhenoStats& stats,
                                          std::size_t length);

/// Split, phenotype statistics on the training side, initialization and
/// training. The checkpoint carries the split and statistics.
TrainResult train_on_dataset(const Dataset& data, const ModelConfig& model_config,
                             const TrainConfig& cfg,
                             const EpochCallback& on_epoch = {});

/// Tab-separated, one row per epoch.
void write_history(const std::filesystem::path& path,
                   const std::vector<EpochRecord>& history);

}  // namespace stf
