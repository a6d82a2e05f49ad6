#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "stformer/data.hpp"
#include "stformer/metrics.hpp"
#include "stformer/run_config.hpp"
#include "stformer/training.hpp"

namespace stf {

enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 1,
  kExitData = 2,
  kExitNumerical = 3,
};

/// Reads a synthetic spec file (a JSON object with SyntheticSpec keys).
SyntheticSpec load_synthetic_spec(const std::filesystem::path& path);

void cmd_synth(const SyntheticSpec& spec, const std::filesystem::path& out_dir);

struct TrainRequest {
  std::filesystem::path config;
  std::optional<std::filesystem::path> out;
  std::optional<std::uint64_t> seed;
  std::ostream* log = nullptr;
};

struct TrainOutputs {
  std::filesystem::path checkpoint;
  std::filesystem::path history;
  std::filesystem::path resolved_config;
  TrainResult result;
};

/// Writes resolved_config.json, history.tsv and checkpoint.bin to the
/// output directory.
TrainOutputs cmd_train(const TrainRequest& request);

enum class Subset { all, train, val };
Subset parse_subset(const std::string& s);

struct EvalRequest {
  std::filesystem::path checkpoint;
  /// Data paths come from this run config when set, else from the
  /// checkpoint.
  std::optional<std::filesystem::path> config;
  Subset subset = Subset::all;
  std::optional<std::filesystem::path> out;  // report file
};

struct EvalOutputs {
  std::filesystem::path report_path;
  MetricsReport report;
};

EvalOutputs cmd_eval(const EvalRequest& request);

struct ExportRequest {
  std::filesystem::path checkpoint;
  std::optional<std::filesystem::path> config;
  std::string subject;
  /// Series file to use instead of the subject's file in the data dir.
  std::optional<std::filesystem::path> series;
  std::filesystem::path out_dir;
};

/// One eval-mode forward pass with capture; returns the written files.
std::vector<std::filesystem::path> cmd_export_attention(
    const ExportRequest& request);

/// Parses arguments, runs the subcommand and maps failures to exit codes.
int run_cli(int argc, const char* const* argv, std::ostream& out,
            std::ostream& err);

}  // namespace stf
