#pragma once

#include <cstddef>
#include <span>

#include "json.hpp"

namespace stf {

/// Confusion counts and rates at a fixed threshold; the positive class is
/// label 1. Rates whose denominator is empty, and AUC on a single-class
/// sample, are NaN with the matching `*_defined` flag cleared.
struct MetricsReport {
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
  double acc = 0.0;
  double spe = 0.0;
  double sen = 0.0;
  double auc = 0.0;
  double threshold = 0.5;
  bool spe_defined = true;
  bool sen_defined = true;
  bool auc_defined = true;

  std::size_t n() const { return tp + tn + fp + fn; }
};

/// Mann-Whitney AUC: the fraction of (positive, negative) pairs where the
/// positive scores higher, ties counting one half. Throws
/// UndefinedMetricError unless both classes are present.
double auc(std::span<const double> scores, std::span<const int> labels);

/// A score >= threshold predicts the positive class.
MetricsReport compute_metrics(std::span<const double> probs,
                              std::span<const int> labels,
                              double threshold = 0.5);

nlohmann::json metrics_to_json(const MetricsReport& r);
MetricsReport metrics_from_json(const nlohmann::json& j);

}  // namespace stf
