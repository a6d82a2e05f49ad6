#include "stformer/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "stformer/errors.hpp"

namespace stf {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_sizes(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw DimensionError("metrics: " + std::to_string(scores.size()) +
                         " scores vs " + std::to_string(labels.size()) +
                         " labels");
  }
  for (int y : labels) {
    if (y != 0 && y != 1) {
      throw DimensionError("metrics: labels must be 0 or 1");
    }
  }
}

nlohmann::json number_or_null(double v) {
  return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v);
}

double number_or_nan(const nlohmann::json& j) {
  return j.is_null() ? kNaN : j.get<double>();
}

}  // namespace

double auc(std::span<const double> scores, std::span<const int> labels) {
  check_sizes(scores, labels);
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of midranks of the positives.
  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) {
        rank_sum += midrank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw UndefinedMetricError("auc is undefined without both classes");
  }
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

MetricsReport compute_metrics(std::span<const double> probs,
                              std::span<const int> labels, double threshold) {
  check_sizes(probs, labels);
  MetricsReport r;
  r.threshold = threshold;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const bool predicted = probs[i] >= threshold;
    if (labels[i] == 1) (predicted ? r.tp : r.fn)++;
    else (predicted ? r.fp : r.tn)++;
  }
  r.acc = r.n() ? static_cast<double>(r.tp + r.tn) / static_cast<double>(r.n())
                : kNaN;
  r.sen_defined = r.tp + r.fn > 0;
  r.sen = r.sen_defined
              ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fn)
              : kNaN;
  r.spe_defined = r.tn + r.fp > 0;
  r.spe = r.spe_defined
              ? static_cast<double>(r.tn) / static_cast<double>(r.tn + r.fp)
              : kNaN;
  try {
    r.auc = auc(probs, labels);
  } catch (const UndefinedMetricError&) {
    r.auc = kNaN;
    r.auc_defined = false;
  }
  return r;
}

nlohmann::json metrics_to_json(const MetricsReport& r) {
  return {{"tp", r.tp},
          {"tn", r.tn},
          {"fp", r.fp},
          {"fn", r.fn},
          {"n", r.n()},
          {"acc", number_or_null(r.acc)},
          {"spe", number_or_null(r.spe)},
          {"sen", number_or_null(r.sen)},
          {"auc", number_or_null(r.auc)},
          {"threshold", r.threshold},
          {"spe_defined", r.spe_defined},
          {"sen_defined", r.sen_defined},
          {"auc_defined", r.auc_defined}};
}

MetricsReport metrics_from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.tp = j.at("tp").get<std::size_t>();
  r.tn = j.at("tn").get<std::size_t>();
  r.fp = j.at("fp").get<std::size_t>();
  r.fn = j.at("fn").get<std::size_t>();
  r.acc = number_or_nan(j.at("acc"));
  r.spe = number_or_nan(j.at("spe"));
  r.sen = number_or_nan(j.at("sen"));
  r.auc = number_or_nan(j.at("auc"));
  r.threshold = j.at("threshold").get<double>();
  r.spe_defined = j.at("spe_defined").get<bool>();
  r.sen_defined = j.at("sen_defined").get<bool>();
  r.auc_defined = j.at("auc_defined").get<bool>();
  return r;
}

}  // namespace stf
