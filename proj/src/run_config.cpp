#include "stformer/run_config.hpp"

#include <fstream>

#include "stformer/errors.hpp"
#include "stformer/json_fields.hpp"

namespace stf {

namespace fs = std::filesystem;

std::vector<std::string> RunConfig::validate() const {
  auto errors = model.validate();
  for (auto& e : train.validate()) errors.push_back(std::move(e));
  if (train.segment_length != model.T) {
    errors.push_back("train.segment_length = " +
                     std::to_string(train.segment_length) +
                     " must equal model.T = " + std::to_string(model.T));
  }
  if (model.pheno_dim != kPhenoDim) {
    errors.push_back("model.pheno_dim must be " + std::to_string(kPhenoDim) +
                     " to match the phenotype encoding");
  }
  if (data.series_dir.empty()) errors.push_back("data.series_dir is required");
  if (data.phenotypic_table.empty()) {
    errors.push_back("data.phenotypic_table is required");
  }
  return errors;
}

RunConfig run_config_from_json(const nlohmann::json& j, const fs::path& base_dir,
                               std::vector<std::string>& errors) {
  RunConfig c;
  JsonFields top(j, "", errors);
  if (!top.ok()) return c;
  bool have_length = false;
  if (const auto* m = top.find("model")) {
    c.model = model_config_from_json(*m, errors, "model");
  }
  if (const auto* t = top.find("train")) {
    c.train = train_config_from_json(*t, errors, "train");
    have_length = t->is_object() && t->contains("segment_length");
  }
  if (!have_length) c.train.segment_length = c.model.T;
  if (const auto* d = top.find("data")) {
    JsonFields f(*d, "data", errors);
    std::string series, table, out;
    f.read("series_dir", series);
    f.read("phenotypic_table", table);
    f.read("output_dir", out);
    f.finish();
    auto resolve = [&](const std::string& p) -> fs::path {
      if (p.empty()) return {};
      return (base_dir / fs::path(p)).lexically_normal();
    };
    c.data.series_dir = resolve(series);
    c.data.phenotypic_table = resolve(table);
    c.data.output_dir = resolve(out.empty() ? c.data.output_dir.string() : out);
  } else {
    c.data.output_dir = (base_dir / c.data.output_dir).lexically_normal();
  }
  top.finish();
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  std::vector<std::string> errors;
  const fs::path base = fs::absolute(path).parent_path();
  RunConfig c = run_config_from_json(j, base, errors);
  if (errors.empty()) errors = c.validate();
  if (!errors.empty()) {
    std::string msg = path.string() + ": invalid config:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  return c;
}

nlohmann::json run_config_to_json(const RunConfig& c) {
  return {{"model", model_config_to_json(c.model.resolved())},
          {"train", train_config_to_json(c.train)},
          {"data",
           {{"series_dir", c.data.series_dir.string()},
            {"phenotypic_table", c.data.phenotypic_table.string()},
            {"output_dir", c.data.output_dir.string()}}}};
}

}  // namespace stf
