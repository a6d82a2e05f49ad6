#include "stformer/training.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>

#include "stformer/errors.hpp"
#include "stformer/json_fields.hpp"
#include "stformer/ops.hpp"

namespace stf {

namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

// NaN sorts below every defined value.
double rankable(double v) {
  return std::isnan(v) ? -std::numeric_limits<double>::infinity() : v;
}

bool improves(const MetricsReport& candidate, const MetricsReport& best,
              SelectionMetric metric) {
  double a1 = rankable(candidate.acc), b1 = rankable(best.acc);
  double a2 = rankable(candidate.auc), b2 = rankable(best.auc);
  if (metric == SelectionMetric::auc) {
    std::swap(a1, a2);
    std::swap(b1, b2);
  }
  if (a1 != b1) return a1 > b1;
  return a2 > b2;
}

Tensor segment_tensor(const Matrix& m) {
  return Tensor::from({m.rows, m.cols}, m.values);
}

}  // namespace

std::vector<std::string> TrainConfig::validate() const {
  std::vector<std::string> e;
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    e.push_back("train.learning_rate must be a finite value >= 0");
  }
  if (batch_size == 0) e.push_back("train.batch_size must be >= 1");
  if (segment_length == 0) e.push_back("train.segment_length must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) e.push_back("train.beta1 must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) e.push_back("train.beta2 must be in [0, 1)");
  if (!(eps > 0.0)) e.push_back("train.eps must be > 0");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    e.push_back("train.val_fraction must be in (0, 1)");
  }
  return e;
}

std::string to_string(SelectionMetric m) {
  return m == SelectionMetric::acc ? "acc" : "auc";
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"segment_length", c.segment_length},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"eps", c.eps},
          {"seed", c.seed},
          {"selection_metric", to_string(c.selection_metric)},
          {"val_fraction", c.val_fraction}};
}

TrainConfig train_config_from_json(const nlohmann::json& j,
                                   std::vector<std::string>& errors,
                                   const std::string& prefix) {
  TrainConfig c;
  JsonFields f(j, prefix, errors);
  if (!f.ok()) return c;
  f.read("epochs", c.epochs);
  f.read("learning_rate", c.learning_rate);
  f.read("batch_size", c.batch_size);
  f.read("segment_length", c.segment_length);
  f.read("beta1", c.beta1);
  f.read("beta2", c.beta2);
  f.read("eps", c.eps);
  std::size_t seed = c.seed;
  f.read("seed", seed);
  c.seed = seed;
  std::string metric;
  f.read("selection_metric", metric);
  if (metric == "acc") c.selection_metric = SelectionMetric::acc;
  else if (metric == "auc") c.selection_metric = SelectionMetric::auc;
  else if (!metric.empty()) f.error("selection_metric", "expected 'acc' or 'auc'");
  f.read("val_fraction", c.val_fraction);
  f.finish();
  return c;
}

Tensor bce_loss(const Tensor& prob, double label) {
  if (prob.numel() != 1) {
    throw DimensionError("bce_loss: expected one probability, got " +
                         shape_string(prob.shape()));
  }
  const double p = prob.data()[0];
  const double pc = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
  const double value = -(label * std::log(pc) + (1.0 - label) * std::log(1.0 - pc));
  const bool inside = p > kProbClamp && p < 1.0 - kProbClamp;
  const double dp = inside ? -label / pc + (1.0 - label) / (1.0 - pc) : 0.0;
  return make_result("bce_loss", {}, {value}, {prob}, [dp](detail::Node& out) {
    auto& in = *out.inputs[0];
    if (!in.requires_grad) return;
    in.grad_buffer()[0] += dp * out.grad[0];
  });
}

GradientMap gradients_of(const ParameterSet& params) {
  GradientMap out;
  for (const auto& [name, t] : params) {
    if (t.has_grad()) {
      const auto g = t.grad();
      out.emplace(name, std::vector<double>(g.begin(), g.end()));
    } else {
      out.emplace(name, std::vector<double>(t.numel(), 0.0));
    }
  }
  return out;
}

void adam_step(ParameterSet& params, const GradientMap& grads, AdamState& state,
               const TrainConfig& cfg) {
  for (const auto& [name, t] : params) {
    auto it = grads.find(name);
    if (it == grads.end() || it->second.size() != t.numel()) {
      throw DimensionError("adam_step: no gradient of matching size for " + name);
    }
  }
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& [name, tensor] : params) {
    const auto& g = grads.at(name);
    auto& m = state.m[name];
    auto& v = state.v[name];
    m.resize(g.size(), 0.0);
    v.resize(g.size(), 0.0);
    auto theta = tensor.mutable_data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      theta[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
}

EvalResult evaluate(const Model& model, const std::vector<SubjectSample>& samples,
                    double threshold) {
  NoGradGuard no_grad;
  EvalResult r;
  std::vector<int> labels;
  ForwardContext ctx{Mode::eval, nullptr, nullptr};
  for (const auto& s : samples) {
    r.probs.push_back(model.forward(segment_tensor(s.segment), s.pheno, ctx).item());
    labels.push_back(s.label);
  }
  r.report = compute_metrics(r.probs, labels, threshold);
  return r;
}

TrainResult train(const ModelConfig& model_config, const TrainConfig& cfg,
                  const ParameterSet& initial,
                  const std::vector<TrainSubject>& train_set,
                  const std::vector<SubjectSample>& val_set,
                  const EpochCallback& on_epoch) {
  if (auto e = cfg.validate(); !e.empty()) {
    std::string msg = "invalid train config:";
    for (const auto& m : e) msg += "\n  " + m;
    throw ConfigError(msg);
  }
  if (cfg.segment_length != model_config.T) {
    throw ConfigError("train.segment_length = " +
                      std::to_string(cfg.segment_length) +
                      " differs from model.T = " + std::to_string(model_config.T));
  }
  if (train_set.empty()) throw DataError("train: empty training set");

  Model model(model_config, snapshot(initial));
  TrainResult result;
  result.best.model = model.config();
  result.best.epoch = 0;
  result.best.params = snapshot(model.params());
  result.best.validation = evaluate(model, val_set).report;

  AdamState adam;
  const std::size_t n = train_set.size();
  const std::size_t length = cfg.segment_length;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    RngStream aug = RngStream::named(cfg.seed, "augmentation", epoch);
    std::vector<Matrix> segments;
    segments.reserve(n);
    for (const auto& s : train_set) {
      segments.push_back(random_segment(*s.series, length, aug));
    }
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    RngStream shuffle = RngStream::named(cfg.seed, "shuffle", epoch);
    for (std::size_t i = n; i > 1; --i) {
      std::swap(order[i - 1], order[shuffle.uniform_index(i)]);
    }
    RngStream drop = RngStream::named(cfg.seed, "dropout", epoch);
    ForwardContext ctx{Mode::train, &drop, nullptr};

    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      const double inv_b = 1.0 / static_cast<double>(end - start);
      try {
        for (auto& [name, p] : model.params()) p.zero_grad();
        for (std::size_t k = start; k < end; ++k) {
          const auto& s = train_set[order[k]];
          Tensor prob = model.forward(segment_tensor(segments[order[k]]), s.pheno, ctx);
          Tensor loss = bce_loss(prob, s.label);
          loss_sum += loss.item();
          backward(scale(loss, inv_b));
        }
        adam_step(model.params(), gradients_of(model.params()), adam, cfg);
        for (const auto& [name, p] : model.params()) {
          for (double v : p.data()) {
            if (!std::isfinite(v)) {
              throw NumericalError("parameter " + name + " became non-finite");
            }
          }
        }
      } catch (const NumericalError& e) {
        throw NumericalError("epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch_index) + ": " + e.what());
      }
    }
    for (auto& [name, p] : model.params()) p.zero_grad();

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(n);
    rec.val = evaluate(model, val_set).report;
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (epoch == 1 || improves(rec.val, result.best.validation, cfg.selection_metric)) {
      result.best.epoch = epoch;
      result.best.params = snapshot(model.params());
      result.best.validation = rec.val;
    }
  }
  return result;
}

std::vector<SubjectSample> center_samples(const Dataset& data,
                                          const std::vector<std::string>& ids,
                                          const PhenoStats& stats,
                                          std::size_t length) {
  std::vector<SubjectSample> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    const Subject& s = data.at(id);
    out.push_back(SubjectSample{id, center_segment(s.series.values, length),
                                encode_phenotype(s.record, stats), s.label});
  }
  return out;
}

TrainResult train_on_dataset(const Dataset& data, const ModelConfig& model_config,
                             const TrainConfig& cfg, const EpochCallback& on_epoch) {
  if (data.rois() != model_config.S) {
    throw DimensionError("data has " + std::to_string(data.rois()) +
                         " ROIs but model.S = " + std::to_string(model_config.S));
  }
  auto [train_ids, val_ids] = split_train_val(data.ids(), cfg.val_fraction, cfg.seed);
  std::vector<PhenotypicRecord> train_records;
  for (const auto& id : train_ids) train_records.push_back(data.at(id).record);
  const PhenoStats stats = PhenoStats::compute(train_records);

  std::vector<TrainSubject> train_set;
  for (const auto& id : train_ids) {
    const Subject& s = data.at(id);
    train_set.push_back(TrainSubject{id, &s.series.values,
                                     encode_phenotype(s.record, stats), s.label});
  }
  const auto val_set = center_samples(data, val_ids, stats, cfg.segment_length);

  TrainResult r = train(model_config, cfg, init_parameters(model_config, cfg.seed),
                        train_set, val_set, on_epoch);
  r.best.pheno_stats = stats;
  r.best.train_ids = std::move(train_ids);
  r.best.val_ids = std::move(val_ids);
  return r;
}

void write_history(const std::filesystem::path& path,
                   const std::vector<EpochRecord>& history) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "epoch\ttrain_loss\tval_acc\tval_spe\tval_sen\tval_auc\ttp\ttn\tfp\tfn\n";
  for (const auto& r : history) {
    out << r.epoch << '\t' << fmt(r.train_loss) << '\t' << fmt(r.val.acc) << '\t'
        << fmt(r.val.spe) << '\t' << fmt(r.val.sen) << '\t' << fmt(r.val.auc)
        << '\t' << r.val.tp << '\t' << r.val.tn << '\t' << r.val.fp << '\t'
        << r.val.fn << '\n';
  }
  if (!out) throw DataError("write failed: " + path.string());
}

}  // namespace stf
