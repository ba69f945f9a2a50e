#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "volbench/evaluation.hpp"
#include "volbench/neural.hpp"
#include "volbench/tensor.hpp"

namespace volbench::testing {

inline double rel_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0, bool requires_grad = true) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  for (auto& v : t.values()) v = n(rng);
  return t;
}

using OpFn = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Largest relative error between tape gradients and central differences of
/// sum(op(inputs) * w) for a fixed random weighting w.
inline double op_gradient_error(const OpFn& op, std::vector<Tensor> inputs, std::mt19937_64& rng,
                                double step = 1e-5) {
  std::vector<double> weights;
  auto loss_of = [&](std::vector<Tensor>& in, bool record) {
    Tape tape(record);
    std::vector<Var> vars;
    for (auto& t : in) vars.push_back(tape.watch(t));
    Var out = op(tape, vars);
    if (weights.empty()) {
      std::normal_distribution<double> n;
      weights.resize(out.values().size());
      for (auto& w : weights) w = n(rng);
    }
    Var loss = sum(out * tape.constant(out.shape(), weights));
    if (record) tape.backward(loss);
    return loss.item();
  };
  loss_of(inputs, true);
  double worst = 0.0;
  for (auto& t : inputs) {
    if (!t.requires_grad()) continue;
    const std::vector<double> analytic = *t.grad();
    t.clear_grad();
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double saved = t[i];
      t[i] = saved + step;
      const double up = loss_of(inputs, false);
      t[i] = saved - step;
      const double down = loss_of(inputs, false);
      t[i] = saved;
      worst = std::max(worst, rel_error(analytic[i], (up - down) / (2.0 * step)));
    }
  }
  return worst;
}

inline CellConfig small_config(ArchKind kind) {
  CellConfig cfg = CellConfig::defaults(kind);
  cfg.hidden_size = 4;
  cfg.num_layers = 2;
  cfg.dropout = 0.0;
  if (kind == ArchKind::tcn) cfg.kernel_size = 3;
  if (kind == ArchKind::rhn) cfg.recurrence_depth = 2;
  if (kind == ArchKind::fsrnn) cfg.fast_cells_k = 3;
  return cfg;
}

/// Worst relative error between backprop and central differences for the
/// summed NLL of a small model, with binarised gates on their continuous
/// surrogate.
inline double architecture_gradient_error(ArchKind kind, std::uint64_t seed, std::size_t steps = 8,
                                          std::size_t batch = 2, double step = 1e-5) {
  SequenceModel model(small_config(kind), seed);
  std::mt19937_64 rng(seed + 1);
  // Zero biases put relu inputs exactly on the kink (e.g. a hidden state of
  // exactly zero); jitter every parameter so the check runs at a smooth point.
  std::normal_distribution<double> jitter(0.0, 0.1);
  for (auto& param : model.parameters().items())
    for (auto& v : param.value.values()) v += jitter(rng);
  Tensor inputs = random_tensor({steps, batch, 1}, rng, 1.0, false);
  std::vector<double> targets(steps * batch);
  std::normal_distribution<double> n;
  for (auto& t : targets) t = n(rng);
  StepContext ctx;
  ctx.continuous_gates = true;
  const double count = static_cast<double>(targets.size());

  auto& store = model.parameters();
  {
    Tape tape;
    Var loss = scale(mean_gaussian_nll(model.forward(tape, inputs, ctx), targets), count);
    tape.backward(loss);
  }
  auto numeric_loss = [&] {
    Tape tape(false);
    Bound p = bind_constants(tape, store);
    return mean_gaussian_nll(model.forward(tape, p, inputs, ctx), targets).item() * count;
  };
  double worst = 0.0;
  for (auto& param : store.items()) {
    const std::vector<double> analytic = *param.value.grad();
    param.value.clear_grad();
    for (std::size_t i = 0; i < param.value.size(); ++i) {
      const double saved = param.value[i];
      param.value[i] = saved + step;
      const double up = numeric_loss();
      param.value[i] = saved - step;
      const double down = numeric_loss();
      param.value[i] = saved;
      worst = std::max(worst, rel_error(analytic[i], (up - down) / (2.0 * step)));
    }
  }
  return worst;
}

/// Largest change in sigma_t (t < cut) after replacing inputs at and after
/// `cut`; exact causality means this is 0.
inline double future_leak(const SequenceModel& model, std::vector<double> x, std::size_t cut, std::mt19937_64& rng) {
  const auto before = model.sigma_path(x);
  std::normal_distribution<double> n(0.0, 3.0);
  for (std::size_t t = cut; t < x.size(); ++t) x[t] += n(rng);
  const auto after = model.sigma_path(x);
  double worst = 0.0;
  // sigma_t reads x_0..x_{t-1}, so indices up to `cut` must match
  for (std::size_t t = 0; t <= cut && t < x.size(); ++t) worst = std::max(worst, std::abs(before[t] - after[t]));
  return worst;
}

}  // namespace volbench::testing
