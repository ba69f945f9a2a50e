#include "volbench/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "volbench/error.hpp"
#include "volbench/evaluation.hpp"
#include "volbench/format.hpp"

namespace volbench {

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
  if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("eps must be positive");
  if (!(anneal_factor > 0.0 && anneal_factor < 1.0)) throw ConfigError("anneal_factor must lie in (0, 1)");
  if (patience < 1) throw ConfigError("patience must be at least 1");
  if (window_len < 1) throw ConfigError("window_len must be at least 1");
  if (window_stride < 1) throw ConfigError("window_stride must be at least 1");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("validation_fraction must lie in (0, 1)");
  }
}

OptimState::OptimState(std::span<const std::size_t> sizes, double lr_, double beta1_, double beta2_, double eps_)
    : lr(lr_), beta1(beta1_), beta2(beta2_), eps(eps_) {
  for (auto n : sizes) {
    m.emplace_back(n, 0.0);
    v.emplace_back(n, 0.0);
  }
}

void adam_step(std::span<const std::span<double>> params, std::span<const std::vector<double>> grads, OptimState& st,
               std::span<const std::string> names) {
  if (params.size() != grads.size() || params.size() != st.m.size()) {
    throw std::invalid_argument("adam_step: parameter, gradient and state counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].size() != grads[i].size() || params[i].size() != st.m[i].size()) {
      throw std::invalid_argument("adam_step: size mismatch for parameter " + std::to_string(i));
    }
    for (double g : grads[i]) {
      if (!std::isfinite(g)) {
        const std::string name = i < names.size() ? names[i] : "#" + std::to_string(i);
        throw NumericFailure("non-finite gradient for parameter " + name);
      }
    }
  }
  ++st.step;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = st.m[i];
    auto& v = st.v[i];
    for (std::size_t j = 0; j < params[i].size(); ++j) {
      const double g = grads[i][j];
      m[j] = st.beta1 * m[j] + (1.0 - st.beta1) * g;
      v[j] = st.beta2 * v[j] + (1.0 - st.beta2) * g * g;
      params[i][j] -= st.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + st.eps);
    }
  }
}

double clip_global_norm(std::span<std::vector<double>> grads, double threshold) {
  if (!(threshold > 0.0)) throw std::invalid_argument("clip threshold must be positive");
  double sq = 0.0;
  for (const auto& g : grads)
    for (double v : g) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm > threshold) {
    const double factor = threshold / norm;
    for (auto& g : grads)
      for (auto& v : g) v *= factor;
  }
  return norm;
}

Tensor dropout_mask(const Shape& shape, double rate, std::mt19937_64& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout rate must lie in [0, 1)");
  Tensor mask = Tensor::filled(shape, 1.0);
  if (!training || rate == 0.0) return mask;
  std::bernoulli_distribution keep(1.0 - rate);
  const double scale = 1.0 / (1.0 - rate);
  for (auto& m : mask.values()) m = keep(rng) ? scale : 0.0;
  return mask;
}

void write_training_log(std::ostream& out, std::span<const EpochLog> log) {
  out << "epoch,train_nll,val_nll,lr\n";
  for (const auto& e : log) {
    out << e.epoch << ',' << format_double(e.train_nll) << ',' << format_double(e.val_nll) << ','
        << format_double(e.lr) << '\n';
  }
}

namespace {

struct Window {
  std::size_t start;
  std::size_t segment_begin;
};

std::vector<Window> make_windows(std::span<const Segment> segments, std::size_t len, std::size_t stride) {
  std::vector<Window> out;
  for (const auto& seg : segments) {
    if (seg.size() < len) continue;
    std::size_t s = seg.begin;
    for (; s + len <= seg.end; s += stride) out.push_back({s, seg.begin});
    // keep the most recent observations even when the stride does not land on them
    if (out.back().start + len != seg.end) out.push_back({seg.end - len, seg.begin});
  }
  return out;
}

double validation_nll(const SequenceModel& model, std::span<const double> x, Segment val) {
  auto sigma = model.sigma_path(x.first(val.end));
  double total = 0.0;
  for (std::size_t t = val.begin; t < val.end; ++t) total += gaussian_nll(x[t], sigma[t]);
  return total / static_cast<double>(val.size());
}

}  // namespace

FitSummary fit_sequence_model(SequenceModel& model, std::span<const double> x, std::span<const Segment> train_segments,
                              Segment validation, const TrainConfig& cfg) {
  cfg.validate();
  if (validation.size() == 0 || validation.end > x.size()) throw std::invalid_argument("validation range is empty or out of bounds");
  std::size_t longest = 0;
  for (const auto& s : train_segments) {
    if (s.end > x.size() || s.begin > s.end) throw std::invalid_argument("training segment out of bounds");
    longest = std::max(longest, s.size());
  }
  const std::size_t len = std::min(cfg.window_len, longest);
  if (len < 2) throw DataError("training segments are too short to form windows");
  const auto windows = make_windows(train_segments, len, cfg.window_stride);

  auto& store = model.parameters();
  std::vector<std::size_t> sizes;
  std::vector<std::string> names;
  for (const auto& p : store.items()) {
    sizes.push_back(p.value.size());
    names.push_back(p.name);
  }
  OptimState st(sizes, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
  std::mt19937_64 rng(cfg.seed);
  const StepContext ctx{true, model.config().dropout, &rng, false};

  std::vector<std::size_t> order(windows.size());
  std::iota(order.begin(), order.end(), 0);

  FitSummary summary;
  summary.best_val_nll = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best = store.snapshot();
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_total = 0.0;
    std::size_t epoch_count = 0;
    const double epoch_lr = st.lr;
    for (std::size_t first = 0, batch_index = 0; first < order.size(); first += cfg.batch_size, ++batch_index) {
      const std::size_t b = std::min(cfg.batch_size, order.size() - first);
      Tensor inputs = Tensor::zeros({len, b, 1});
      std::vector<double> targets(len * b);
      for (std::size_t j = 0; j < b; ++j) {
        const Window& w = windows[order[first + j]];
        for (std::size_t i = 0; i < len; ++i) {
          const std::size_t t = w.start + i;
          inputs[i * b + j] = t > w.segment_begin ? x[t - 1] : 0.0;
          targets[i * b + j] = x[t];
        }
      }
      Tape tape;
      Var loss = mean_gaussian_nll(model.forward(tape, inputs, ctx), targets);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw NumericFailure("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch_index));
      }
      tape.backward(loss);
      std::vector<std::vector<double>> grads;
      std::vector<std::span<double>> params;
      for (auto& p : store.items()) {
        grads.push_back(p.value.grad() ? *p.value.grad() : std::vector<double>(p.value.size(), 0.0));
        p.value.clear_grad();
        params.push_back(p.value.values());
      }
      clip_global_norm(grads, cfg.clip_norm);
      adam_step(params, grads, st, names);
      for (auto& p : store.items()) {
        if (!p.bounds) continue;
        for (auto& v : p.value.values()) v = std::clamp(v, p.bounds->first, p.bounds->second);
      }
      epoch_total += value * static_cast<double>(b);
      epoch_count += b;
    }

    const double val = validation_nll(model, x, validation);
    if (!std::isfinite(val)) throw NumericFailure("non-finite validation loss at epoch " + std::to_string(epoch));
    summary.log.push_back({epoch, epoch_total / static_cast<double>(epoch_count), val, epoch_lr});
    if (val < summary.best_val_nll) {
      summary.best_val_nll = val;
      summary.best_epoch = epoch;
      best = store.snapshot();
      since_best = 0;
    } else {
      ++since_best;
      if (since_best % cfg.patience == 0) st.lr *= cfg.anneal_factor;
      if (cfg.stop_patience > 0 && since_best >= cfg.stop_patience) break;
    }
  }
  store.restore(best);
  return summary;
}

TrainResult train_model(const CellConfig& spec, const ReturnSeries& series, const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.window_len >= series.train_len) {
    throw ConfigError("window_len " + std::to_string(cfg.window_len) + " must be shorter than the training portion (" +
                      std::to_string(series.train_len) + ")");
  }
  auto n_val = static_cast<std::size_t>(std::llround(cfg.validation_fraction * static_cast<double>(series.train_len)));
  n_val = std::clamp<std::size_t>(n_val, 1, series.train_len - 2);
  const Segment fit{0, series.train_len - n_val};
  const Segment val{fit.end, series.train_len};

  SequenceModel model(spec, derive_seed(cfg.seed, "init", spec.to_json()), cfg.init);
  TrainConfig inner = cfg;
  inner.seed = derive_seed(cfg.seed, "batches", spec.to_json());
  auto summary = fit_sequence_model(model, series.returns, std::span(&fit, 1), val, inner);
  return {std::move(model), std::move(summary)};
}

CrossValidationResult cross_validate(std::span<const GridPoint> grid, const ReturnSeries& series,
                                     const TrainConfig& cfg) {
  if (grid.empty()) throw ConfigError("cross-validation grid is empty");
  const std::size_t n = series.train_len;
  if (n < kFolds * 4) throw DataError("series " + series.series_id + " is too short for five folds");
  std::vector<std::size_t> edge(kFolds + 1);
  for (std::size_t k = 0; k <= kFolds; ++k) edge[k] = k * n / kFolds;

  CrossValidationResult out;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    std::vector<double> scores;
    for (std::size_t k = 0; k < kFolds; ++k) {
      std::vector<Segment> train;
      if (edge[k] >= 2) train.push_back({0, edge[k]});
      if (n - edge[k + 1] >= 2) train.push_back({edge[k + 1], n});
      TrainConfig fold = cfg;
      fold.lr = grid[g].lr;
      const std::string label = grid[g].cell.to_json() + "/" + format_double(grid[g].lr) + "/" + std::to_string(k);
      fold.seed = derive_seed(cfg.seed, "cv", label);
      SequenceModel model(grid[g].cell, derive_seed(cfg.seed, "cv-init", label), cfg.init);
      scores.push_back(fit_sequence_model(model, series.returns, train, {edge[k], edge[k + 1]}, fold).best_val_nll);
    }
    out.mean_scores.push_back(std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(kFolds));
    out.fold_scores.push_back(std::move(scores));
  }

  auto key = [&](std::size_t g) {
    return std::make_tuple(out.mean_scores[g], expected_parameter_count(grid[g].cell),
                           grid[g].cell.to_json() + format_double(grid[g].lr), g);
  };
  for (std::size_t g = 1; g < grid.size(); ++g) {
    if (key(g) < key(out.best_index)) out.best_index = g;
  }
  return out;
}

}  // namespace volbench
