#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "volbench/classical.hpp"
#include "volbench/data.hpp"
#include "volbench/evaluation.hpp"
#include "volbench/neural.hpp"
#include "volbench/training.hpp"

namespace volbench {

struct SyntheticSpec {
  std::size_t n_series = 10;
  std::size_t length = 2014;  // price rows per series
  double omega = 0.05;
  double alpha = 0.10;
  double beta = 0.85;
  std::uint64_t seed = 1;
  double scale = 0.01;  // raw return = scale * garch draw
  Date start_date{2000, 1, 3};

  ChParams params() const { return ChParams::garch(omega, alpha, beta); }
};

/// One benchmarked model: a neural architecture or a classical baseline.
struct ModelSpec {
  std::string name;
  std::variant<CellConfig, ChKind> kind;

  bool neural() const { return std::holds_alternative<CellConfig>(kind); }
};

struct GridOverride {
  std::string cell_json;  // object merged over the model's own config
  std::optional<double> lr;
};

struct RunConfig {
  std::optional<std::filesystem::path> csv;
  std::optional<SyntheticSpec> synthetic;
  double split_fraction = kDefaultSplitFraction;
  std::size_t min_len = kDefaultMinLength;
  std::vector<ModelSpec> models;
  TrainConfig train;
  FitOptions fit;
  std::vector<GridOverride> cv_grid;
  std::vector<std::string> case_study;
  bool include_oracle = false;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> output_dir;

  // Canonical JSON of everything that affects outputs; hashed into the run directory name.
  std::string canonical_json() const;
  std::string digest() const;
};

/// Parses and validates a JSON run configuration. Relative paths resolve
/// against `base_dir`. Unknown keys are errors. `seed_override` replaces the
/// configured seed.
RunConfig parse_run_config(std::string_view json, const std::filesystem::path& base_dir = {},
                           std::optional<std::uint64_t> seed_override = std::nullopt);
RunConfig load_run_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed_override = std::nullopt);

// Reads VOLBENCH_SEED; throws ConfigError when it is set but not an integer.
std::optional<std::uint64_t> seed_from_environment();

/// Synthetic price universe: s_0 = 1, s_t = exp(cumulative returns), one row
/// per business day.
std::vector<PriceSeries> synthesize_prices(const SyntheticSpec& spec);
std::string synthetic_series_id(std::size_t index, std::size_t count);

struct PreparedData {
  std::vector<PriceSeries> raw;
  DatasetManifest manifest;
  std::vector<ReturnSeries> series;
};
PreparedData prepare_data(const RunConfig& cfg);

/// True-parameter forecaster for synthetic data: maps normalised returns back
/// to generator units, runs the generating recursion from its unconditional
/// variance and rescales.
class OracleForecaster : public Forecaster {
 public:
  OracleForecaster(const SyntheticSpec& spec, const ReturnSeries& series);
  std::vector<double> sigma_path(std::span<const double> x) const override;

 private:
  ChParams params_;
  double scale_, mean_, std_;
};

class NeuralForecaster : public Forecaster {
 public:
  explicit NeuralForecaster(const SequenceModel& model) : model_(model) {}
  std::vector<double> sigma_path(std::span<const double> x) const override { return model_.sigma_path(x); }

 private:
  const SequenceModel& model_;
};

inline constexpr std::string_view kOracleName = "ORACLE";

/// Runs fn(0..count-1) on up to `workers` threads. Every job runs; the
/// exception of the lowest failing index is rethrown afterwards.
void run_jobs(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& fn);

/// Writes `content` to `path` unless an identical file is already there. A
/// different existing file is a DataError, so earlier results are never
/// overwritten.
void write_output(const std::filesystem::path& path, const std::string& content);

enum class Stage { synth, prepare, train, evaluate, report, benchmark };
std::optional<Stage> parse_stage(std::string_view name);

struct RunOptions {
  std::filesystem::path out_root = "runs";
  std::size_t jobs = 1;
  std::function<void(const std::string&)> progress;
};

// Executes one subcommand; returns the run directory.
std::filesystem::path run_stage(Stage stage, const RunConfig& cfg, const RunOptions& options);

}  // namespace volbench
