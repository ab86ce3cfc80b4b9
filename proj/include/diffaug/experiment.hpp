#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "diffaug/gan.hpp"
#include "diffaug/metrics.hpp"

namespace diffaug {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ExperimentConfig {
  TrainConfig train;
  /// "synthetic" or "folder".
  std::string dataset = "synthetic";
  std::string dataset_path;
  std::int64_t dataset_size = 500;
  std::uint64_t dataset_seed = 0;
  double fraction = 1.0;
  std::string output_dir = "runs/default";
  std::int64_t eval_samples = 256;
  std::uint64_t feature_seed = 1234;
  /// "", "base_channels" or "r1_gamma".
  std::string sweep_axis;
  std::vector<double> sweep_values;
  bool write_grids = true;
  bool write_checkpoints = true;
};

nlohmann::json to_json(const ExperimentConfig& config);
/// Rejects unknown keys and mistyped values, naming the offending key.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
/// "key=value"; the value is parsed as JSON, falling back to a bare string.
void apply_override(ExperimentConfig& config, const std::string& assignment);

struct RunResult {
  std::vector<MetricsRecord> history;
  double best_proxy_fid = 0.0;
  std::int64_t best_step = 0;
  std::int64_t final_step = 0;
  bool halted = false;
  std::string halt_reason;
  std::optional<TrainState> final_state;
};

/// Trains with periodic evaluation (step 0, every eval_every steps, and the
/// final step). When output_dir is non-empty writes metrics.csv, grids/,
/// ckpt/ and summary.txt there (plus halt.txt on a non-finite halt).
RunResult run_experiment(const ExperimentConfig& config);

/// Process exit code for a finished run: 0 on success, 3 on a halt.
int exit_code(const RunResult& result);

struct SweepRow {
  double axis_value = 0.0;
  double best_proxy_fid = 0.0;
  std::int64_t best_step = 0;
  bool halted = false;
};

/// One run per axis value sharing the seed; each run writes to
/// <output_dir>/<axis>_<value>, the consolidated table to
/// <output_dir>/sweep.csv.
std::vector<SweepRow> run_sweep(const ExperimentConfig& config);

/// Frames along the straight line from z0 to z1 (endpoints included), as a
/// (steps, 3, R, R) tensor.
Tensor interpolate(const Generator& generator, const Tensor& z0, const Tensor& z1, int steps);

}  // namespace diffaug
