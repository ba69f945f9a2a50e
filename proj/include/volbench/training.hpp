#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "volbench/data.hpp"
#include "volbench/neural.hpp"

namespace volbench {

struct TrainConfig {
  std::size_t batch_size = 64;
  std::size_t max_epochs = 100;
  double clip_norm = 1.0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double anneal_factor = 0.5;
  std::size_t patience = 5;
  std::uint64_t seed = 0;
  std::size_t window_len = 64;
  // Offset between consecutive training window starts.
  std::size_t window_stride = 8;
  // Stop once validation NLL has not improved for this many epochs; 0 never stops early.
  std::size_t stop_patience = 15;
  double validation_fraction = 0.1;
  InitScheme init = InitScheme::scaled_normal;

  // Throws ConfigError naming the violated constraint.
  void validate() const;
};

struct OptimState {
  std::size_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  OptimState() = default;
  OptimState(std::span<const std::size_t> sizes, double lr, double beta1 = 0.9, double beta2 = 0.999,
             double eps = 1e-8);
};

/// Bias-corrected Adam. Throws NumericFailure naming the parameter when a
/// gradient is not finite. `names` may be empty.
void adam_step(std::span<const std::span<double>> params, std::span<const std::vector<double>> grads, OptimState& st,
               std::span<const std::string> names = {});

// Rescales so the global L2 norm is at most `threshold`; returns the norm before clipping.
double clip_global_norm(std::span<std::vector<double>> grads, double threshold);

// Inverted dropout mask: 0 with probability `rate`, else 1/(1-rate). All ones
// when not training.
Tensor dropout_mask(const Shape& shape, double rate, std::mt19937_64& rng, bool training = true);

struct EpochLog {
  std::size_t epoch = 0;
  double train_nll = 0.0;
  double val_nll = 0.0;
  double lr = 0.0;
};

void write_training_log(std::ostream& out, std::span<const EpochLog> log);

// Half-open index range [begin, end) into a return sequence.
struct Segment {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
};

struct FitSummary {
  std::vector<EpochLog> log;
  double best_val_nll = 0.0;
  std::size_t best_epoch = 0;
};

/// Trains on windows drawn from `train_segments` and selects the parameters
/// with the best mean NLL on `validation`, scored from the full history
/// x[0..validation.end). The model holds the selected parameters on return.
FitSummary fit_sequence_model(SequenceModel& model, std::span<const double> x,
                              std::span<const Segment> train_segments, Segment validation, const TrainConfig& cfg);

struct TrainResult {
  SequenceModel model;
  FitSummary summary;
};

/// Full protocol on one series: the last validation_fraction of the training
/// portion drives annealing and model selection. A pure function of its
/// arguments.
TrainResult train_model(const CellConfig& spec, const ReturnSeries& series, const TrainConfig& cfg);

struct GridPoint {
  CellConfig cell;
  double lr = 1e-3;
};

struct CrossValidationResult {
  std::size_t best_index = 0;
  std::vector<std::vector<double>> fold_scores;  // [grid point][fold]
  std::vector<double> mean_scores;
};

inline constexpr std::size_t kFolds = 5;

/// Contiguous five-fold cross-validation over the training portion. Ties
/// on mean score go to the smaller parameter count, then the earlier point.
CrossValidationResult cross_validate(std::span<const GridPoint> grid, const ReturnSeries& series,
                                     const TrainConfig& cfg);

}  // namespace volbench
