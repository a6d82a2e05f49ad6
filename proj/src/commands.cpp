#include "stformer/commands.hpp"

#include <fstream>

#include "CLI11.hpp"
#include "stformer/attention.hpp"
#include "stformer/checkpoint.hpp"
#include "stformer/errors.hpp"

namespace stf {

namespace fs = std::filesystem;

namespace {

void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw DataError("write failed: " + path.string());
}

DataPaths data_paths(const Checkpoint& ckpt,
                     const std::optional<fs::path>& config) {
  if (config) return load_run_config(*config).data;
  DataPaths d;
  try {
    d.series_dir = ckpt.run.at("data").at("series_dir").get<std::string>();
    d.phenotypic_table =
        ckpt.run.at("data").at("phenotypic_table").get<std::string>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("checkpoint records no data paths; pass --config");
  }
  return d;
}

void require_rois(std::size_t model_s, std::size_t data_s, const fs::path& where) {
  if (model_s != data_s) {
    throw DataError("model.S = " + std::to_string(model_s) + " but " +
                    where.string() + " has " + std::to_string(data_s) +
                    " ROI columns");
  }
}

}  // namespace

SyntheticSpec load_synthetic_spec(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open spec " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  std::vector<std::string> errors;
  SyntheticSpec s = synthetic_spec_from_json(j, errors, "");
  if (errors.empty()) errors = s.validate();
  if (!errors.empty()) {
    std::string msg = path.string() + ": invalid synthetic spec:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  return s;
}

void cmd_synth(const SyntheticSpec& spec, const fs::path& out_dir) {
  write_synthetic(out_dir, generate_synthetic(spec), spec);
}

TrainOutputs cmd_train(const TrainRequest& request) {
  RunConfig cfg = load_run_config(request.config);
  if (request.seed) cfg.train.seed = *request.seed;
  if (request.out) cfg.data.output_dir = fs::absolute(*request.out).lexically_normal();

  TrainOutputs out;
  const fs::path dir = cfg.data.output_dir;
  fs::create_directories(dir);
  out.resolved_config = dir / "resolved_config.json";
  out.history = dir / "history.tsv";
  out.checkpoint = dir / "checkpoint.bin";
  write_json(out.resolved_config, run_config_to_json(cfg));

  const Dataset data = load_dataset(cfg.data.series_dir, cfg.data.phenotypic_table,
                                    cfg.train.segment_length);
  require_rois(cfg.model.S, data.rois(), cfg.data.series_dir);

  EpochCallback log;
  if (request.log) {
    log = [&](const EpochRecord& r) {
      *request.log << "epoch " << r.epoch << "  loss " << r.train_loss
                   << "  val_acc " << r.val.acc << "  val_auc " << r.val.auc
                   << '\n';
    };
  }
  out.result = train_on_dataset(data, cfg.model, cfg.train, log);
  out.result.best.run = {
      {"train", train_config_to_json(cfg.train)},
      {"data",
       {{"series_dir", cfg.data.series_dir.string()},
        {"phenotypic_table", cfg.data.phenotypic_table.string()}}}};
  write_history(out.history, out.result.history);
  save_checkpoint(out.checkpoint, out.result.best);
  if (request.log) {
    *request.log << "best epoch " << out.result.best.epoch << "  val_acc "
                 << out.result.best.validation.acc << "\n";
  }
  return out;
}

Subset parse_subset(const std::string& s) {
  if (s == "all") return Subset::all;
  if (s == "train") return Subset::train;
  if (s == "val") return Subset::val;
  throw ConfigError("unknown subset '" + s + "' (expected all, train or val)");
}

EvalOutputs cmd_eval(const EvalRequest& request) {
  const Checkpoint ckpt = load_checkpoint(request.checkpoint);
  const DataPaths paths = data_paths(ckpt, request.config);
  const Dataset data =
      load_dataset(paths.series_dir, paths.phenotypic_table, ckpt.model.T);
  require_rois(ckpt.model.S, data.rois(), paths.series_dir);

  std::vector<std::string> ids;
  std::string subset_name = "all";
  switch (request.subset) {
    case Subset::all: ids = data.ids(); break;
    case Subset::train: ids = ckpt.train_ids; subset_name = "train"; break;
    case Subset::val: ids = ckpt.val_ids; subset_name = "val"; break;
  }
  const auto samples = center_samples(data, ids, ckpt.pheno_stats, ckpt.model.T);
  const Model model(ckpt.model, ckpt.params);
  const EvalResult result = evaluate(model, samples);

  nlohmann::json predictions = nlohmann::json::array();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    predictions.push_back({{"subject_id", samples[i].subject_id},
                           {"label", samples[i].label},
                           {"prob", result.probs[i]}});
  }
  EvalOutputs out;
  out.report = result.report;
  out.report_path = request.out ? *request.out
                                : request.checkpoint.parent_path() /
                                      ("eval_" + subset_name + ".json");
  write_json(out.report_path, {{"subset", subset_name},
                               {"checkpoint_epoch", ckpt.epoch},
                               {"metrics", metrics_to_json(result.report)},
                               {"predictions", predictions}});
  return out;
}

std::vector<fs::path> cmd_export_attention(const ExportRequest& request) {
  const Checkpoint ckpt = load_checkpoint(request.checkpoint);
  const DataPaths paths = data_paths(ckpt, request.config);

  RoiTimeSeries series;
  fs::path series_file;
  std::string id = request.subject;
  if (request.series) {
    series_file = *request.series;
    series = load_subject_series(series_file, ckpt.model.T);
    if (id.empty()) id = series.subject_id;
  } else {
    if (id.empty()) throw ConfigError("export-attention needs --subject or --series");
    series_file = find_series_file(paths.series_dir, id);
    series = load_subject_series(series_file, ckpt.model.T);
  }
  require_rois(ckpt.model.S, series.rois(), series_file);

  PhenotypicRecord record;
  record.subject_id = id;
  bool found = false;
  if (!paths.phenotypic_table.empty() && fs::exists(paths.phenotypic_table)) {
    for (auto& r : load_phenotypic_table(paths.phenotypic_table)) {
      if (r.subject_id == id) {
        record = std::move(r);
        found = true;
        break;
      }
    }
  }
  if (!found && !request.series) {
    throw DataError("subject '" + id + "' is not in " +
                    paths.phenotypic_table.string());
  }

  const Matrix segment = center_segment(series.values, ckpt.model.T);
  const Model model(ckpt.model, ckpt.params);
  AttentionCapture capture;
  {
    NoGradGuard no_grad;
    ForwardContext ctx{Mode::eval, nullptr, &capture};
    model.forward(Tensor::from({segment.rows, segment.cols}, segment.values),
                  encode_phenotype(record, ckpt.pheno_stats), ctx);
  }
  return export_scores(capture, request.out_dir);
}

int run_cli(int argc, const char* const* argv, std::ostream& out,
            std::ostream& err) {
  CLI::App app{"Spatiotemporal transformer for ROI time-series classification"};
  app.require_subcommand(1);

  std::string config, out_path, checkpoint, subset = "all", subject, series;
  std::uint64_t seed = 0;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("--config", config, "Synthetic spec file (JSON)");
  synth->add_option("--out", out_path, "Output directory")->required();
  auto* synth_seed = synth->add_option("--seed", seed, "Override the spec seed");
  SyntheticSpec flags;
  std::vector<std::size_t> signal;
  auto* o_n = synth->add_option("--n-subjects", flags.n_subjects);
  auto* o_t = synth->add_option("--t-full", flags.T_full);
  auto* o_s = synth->add_option("--rois", flags.S);
  auto* o_b = synth->add_option("--balance", flags.balance);
  auto* o_sig = synth->add_option("--signal-rois", signal)->delimiter(',');
  auto* o_e = synth->add_option("--effect-size", flags.effect_size);
  auto* o_noise = synth->add_option("--noise-std", flags.noise_std);

  auto* train = app.add_subcommand("train", "Train a model from a run config");
  train->add_option("--config", config, "Run config (JSON)")->required();
  train->add_option("--out", out_path, "Output directory (overrides data.output_dir)");
  auto* train_seed = train->add_option("--seed", seed, "Override train.seed");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_option("--config", config, "Run config supplying the data paths");
  eval->add_option("--subset", subset, "all, train or val");
  eval->add_option("--out", out_path, "Report file (JSON)");

  auto* exp = app.add_subcommand("export-attention",
                                 "Write attention matrices for one subject");
  exp->add_option("--checkpoint", checkpoint)->required();
  exp->add_option("--config", config, "Run config supplying the data paths");
  exp->add_option("--subject", subject);
  exp->add_option("--series", series, "Series file to use directly");
  exp->add_option("--out", out_path, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*synth) {
      SyntheticSpec spec = config.empty() ? SyntheticSpec{} : load_synthetic_spec(config);
      if (o_n->count()) spec.n_subjects = flags.n_subjects;
      if (o_t->count()) spec.T_full = flags.T_full;
      if (o_s->count()) spec.S = flags.S;
      if (o_b->count()) spec.balance = flags.balance;
      if (o_sig->count()) spec.signal_rois = signal;
      if (o_e->count()) spec.effect_size = flags.effect_size;
      if (o_noise->count()) spec.noise_std = flags.noise_std;
      if (synth_seed->count()) spec.seed = seed;
      if (auto e = spec.validate(); !e.empty()) {
        std::string msg = "invalid synthetic spec:";
        for (const auto& m : e) msg += "\n  " + m;
        throw ConfigError(msg);
      }
      cmd_synth(spec, out_path);
      out << "wrote " << spec.n_subjects << " subjects to " << out_path << '\n';
    } else if (*train) {
      TrainRequest req;
      req.config = config;
      if (!out_path.empty()) req.out = out_path;
      if (train_seed->count()) req.seed = seed;
      req.log = &out;
      const auto res = cmd_train(req);
      out << "checkpoint " << res.checkpoint.string() << '\n';
    } else if (*eval) {
      EvalRequest req;
      req.checkpoint = checkpoint;
      if (!config.empty()) req.config = config;
      req.subset = parse_subset(subset);
      if (!out_path.empty()) req.out = out_path;
      const auto res = cmd_eval(req);
      const auto& r = res.report;
      out << "n " << r.n() << "  acc " << r.acc << "  spe " << r.spe << "  sen "
          << r.sen << "  auc " << r.auc << '\n'
          << "report " << res.report_path.string() << '\n';
    } else if (*exp) {
      ExportRequest req;
      req.checkpoint = checkpoint;
      if (!config.empty()) req.config = config;
      req.subject = subject;
      if (!series.empty()) req.series = series;
      req.out_dir = out_path;
      const auto files = cmd_export_attention(req);
      out << "wrote " << files.size() << " matrices to " << out_path << '\n';
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const DimensionError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitOk;
}

}  // namespace stf
