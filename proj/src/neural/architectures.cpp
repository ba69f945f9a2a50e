#include "architectures.hpp"

#include <cmath>
#include <stdexcept>

namespace volbench {

namespace {

std::size_t layer_input(std::size_t layer, std::size_t hidden) { return layer == 0 ? 1 : hidden; }

std::size_t ipow(std::size_t base, std::size_t exp) {
  std::size_t r = 1;
  for (std::size_t i = 0; i < exp; ++i) r *= base;
  return r;
}

// [T,B,C] -> vector of [B,C]
std::vector<Var> unstack(const Var& seq) {
  std::vector<Var> steps;
  steps.reserve(seq.shape()[0]);
  for (std::size_t t = 0; t < seq.shape()[0]; ++t) steps.push_back(time_step(seq, t));
  return steps;
}

Var project_sequence(const Var& seq, const Var& w) {
  const auto& s = seq.shape();
  Var flat = reshape(seq, {s[0] * s[1], s[2]});
  return reshape(matmul(flat, w), {s[0], s[1], w.shape()[1]});
}

Var column_of(Tape& tape, std::size_t batch, double value) { return tape.constant(Tensor::filled({batch, 1}, value)); }

}  // namespace

std::vector<std::size_t> tcn_dilations(const CellConfig& cfg) {
  std::vector<std::size_t> d;
  for (std::size_t l = 1; l <= cfg.num_layers; ++l) d.push_back(ipow(cfg.dilation_base, l));
  return d;
}

std::vector<std::size_t> dilated_rnn_dilations(const CellConfig& cfg) {
  std::vector<std::size_t> d;
  for (std::size_t l = 0; l < cfg.num_layers; ++l) d.push_back(ipow(cfg.dilation_base, l));
  return d;
}

std::size_t tcn_receptive_field(const CellConfig& cfg) {
  std::size_t rf = 1;
  for (auto d : tcn_dilations(cfg)) rf += (cfg.kernel_size - 1) * d;
  return rf;
}

// ---------------------------------------------------------------- TCN

TcnEncoder::TcnEncoder(const CellConfig& cfg, ParameterStore& store, Initializer& init) : hidden_(cfg.hidden_size) {
  const auto dilations = tcn_dilations(cfg);
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const std::size_t in = layer_input(l, hidden_);
    const std::string prefix = "tcn." + std::to_string(l);
    Block b;
    b.dilation = dilations[l];
    b.v = store.add_normal(prefix + ".v", {cfg.kernel_size, in, hidden_}, init.stddev(cfg.kernel_size * in), init.rng);
    // g starts at ||v|| so the normalised filter equals its initial draw.
    std::vector<double> norms(hidden_, 0.0);
    const auto v = store[b.v].value.values();
    for (std::size_t r = 0; r < v.size() / hidden_; ++r)
      for (std::size_t o = 0; o < hidden_; ++o) norms[o] += v[r * hidden_ + o] * v[r * hidden_ + o];
    b.g = store.add_filled(prefix + ".g", {hidden_}, 0.0);
    for (std::size_t o = 0; o < hidden_; ++o) store[b.g].value[o] = std::sqrt(norms[o]);
    b.bias = store.add_filled(prefix + ".bias", {hidden_}, 0.0);
    if (in != hidden_) {
      b.proj = store.add_normal(prefix + ".proj", {in, hidden_}, init.stddev(in), init.rng);
      b.proj_bias = store.add_filled(prefix + ".proj_bias", {hidden_}, 0.0);
    }
    blocks_.push_back(b);
  }
}

Var TcnEncoder::encode(const Bound& p, const Var& inputs, const StepContext& ctx) const {
  Var x = inputs;
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const Block& b = blocks_[l];
    if (l > 0) x = ctx.apply_dropout(x);
    Var y = relu(add_bias(conv1d_causal_dilated(x, weight_norm(p[b.v], p[b.g]), b.dilation), p[b.bias]));
    Var residual = b.proj ? add_bias(project_sequence(x, p[*b.proj]), p[*b.proj_bias]) : x;
    x = y + residual;
  }
  return x;
}

// ---------------------------------------------------------------- DilatedRNN

DilatedRnnEncoder::DilatedRnnEncoder(const CellConfig& cfg, ParameterStore& store, Initializer& init)
    : dilations_(dilated_rnn_dilations(cfg)) {
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    cells_.emplace_back(store, "drnn." + std::to_string(l), cfg.base_cell, layer_input(l, cfg.hidden_size),
                        cfg.hidden_size, init);
  }
}

Var DilatedRnnEncoder::encode(const Bound& p, const Var& inputs, const StepContext& ctx) const {
  Tape& tape = inputs.tape();
  const std::size_t steps = inputs.shape()[0], batch = inputs.shape()[1];
  Var seq = inputs;
  for (std::size_t l = 0; l < cells_.size(); ++l) {
    const RecurrentCell& cell = cells_[l];
    if (l > 0) seq = ctx.apply_dropout(seq);
    auto gx = unstack(cell.project(p, seq));
    auto states = dilated_recurrence(steps, dilations_[l], cell.zero_state(tape, batch),
                                     [&](std::size_t t, const CellState& prev) {
                                       return cell.step_projected(p, gx[t], prev);
                                     });
    std::vector<Var> hs;
    hs.reserve(steps);
    for (const auto& s : states) hs.push_back(s.h);
    seq = stack_steps(hs);
  }
  return seq;
}

// ---------------------------------------------------------------- IndRNN

IndRnnEncoder::IndRnnEncoder(const CellConfig& cfg, ParameterStore& store, Initializer& init)
    : hidden_(cfg.hidden_size) {
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const std::size_t in = layer_input(l, hidden_);
    const std::string prefix = "indrnn." + std::to_string(l);
    Layer layer;
    layer.w = store.add_normal(prefix + ".w", {in, hidden_}, init.stddev(in), init.rng);
    layer.u = store.add_uniform(prefix + ".u", {hidden_}, 0.0, 1.0, init.rng);
    store.set_bounds(layer.u, -1.0, 1.0);
    layer.b = store.add_filled(prefix + ".b", {hidden_}, 0.0);
    layers_.push_back(layer);
  }
}

Var IndRnnEncoder::encode(const Bound& p, const Var& inputs, const StepContext& ctx) const {
  Tape& tape = inputs.tape();
  const std::size_t steps = inputs.shape()[0], batch = inputs.shape()[1];
  Var seq = inputs;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    if (l > 0) seq = ctx.apply_dropout(seq);
    // x W + b for all steps at once; the recurrence adds u * h_prev.
    auto gx = unstack(project_sequence(seq, p[layer.w]));
    Var h = tape.constant(Tensor::zeros({batch, hidden_}));
    std::vector<Var> hs;
    hs.reserve(steps);
    for (std::size_t t = 0; t < steps; ++t) {
      h = relu(add_bias(gx[t] + mul_columns(h, p[layer.u]), p[layer.b]));
      hs.push_back(h);
    }
    seq = stack_steps(hs);
  }
  return seq;
}

// ---------------------------------------------------------------- QRNN

QrnnEncoder::QrnnEncoder(const CellConfig& cfg, ParameterStore& store, Initializer& init)
    : hidden_(cfg.hidden_size) {
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const std::size_t in = layer_input(l, hidden_);
    const std::string prefix = "qrnn." + std::to_string(l);
    Layer layer;
    layer.filter = store.add_normal(prefix + ".filter", {cfg.kernel_size, in, 3 * hidden_},
                                    init.stddev(cfg.kernel_size * in), init.rng);
    layer.bias = store.add_filled(prefix + ".bias", {3 * hidden_}, 0.0);
    layers_.push_back(layer);
  }
}

Var QrnnEncoder::encode(const Bound& p, const Var& inputs, const StepContext& ctx) const {
  Tape& tape = inputs.tape();
  const std::size_t steps = inputs.shape()[0], batch = inputs.shape()[1];
  const std::size_t h = hidden_;
  Var seq = inputs;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (l > 0) seq = ctx.apply_dropout(seq);
    Var conv = add_bias(conv1d_causal_dilated(seq, p[layers_[l].filter], 1), p[layers_[l].bias]);
    auto z = unstack(tanh(slice_last(conv, 0, h)));
    auto f = unstack(sigmoid(slice_last(conv, h, h)));
    auto o = unstack(sigmoid(slice_last(conv, 2 * h, h)));
    Var c = tape.constant(Tensor::zeros({batch, h}));
    std::vector<Var> hs;
    hs.reserve(steps);
    for (std::size_t t = 0; t < steps; ++t) {
      auto pooled = fo_pool_step(z[t], f[t], o[t], c);
      c = pooled.c;
      hs.push_back(pooled.h);
    }
    seq = stack_steps(hs);
  }
  return seq;
}

// ---------------------------------------------------------------- SkipRNN

SkipRnnEncoder::SkipRnnEncoder(const CellConfig& cfg, ParameterStore& store, Initializer& init) {
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    cells_.emplace_back(store, "skip." + std::to_string(l), cfg.base_cell, layer_input(l, cfg.hidden_size),
                        cfg.hidden_size, init);
  }
  wp_ = store.add_normal("skip.wp", {cfg.hidden_size, 1}, init.stddev(cfg.hidden_size), init.rng);
  bp_ = store.add_filled("skip.bp", {1}, 0.0);
}

Var SkipRnnEncoder::encode(const Bound& p, const Var& inputs, const StepContext& ctx) const {
  Tape& tape = inputs.tape();
  const std::size_t steps = inputs.shape()[0], batch = inputs.shape()[1];
  auto gx = unstack(cells_[0].project(p, inputs));

  // The first layer consumes a precomputed projection, so the update reads
  // the step index rather than the raw input.
  std::size_t t = 0;
  StackedUpdate update = [&](const Var&, const std::vector<CellState>& prev) {
    std::vector<CellState> next;
    next.reserve(cells_.size());
    next.push_back(cells_[0].step_projected(p, gx[t], prev[0]));
    for (std::size_t l = 1; l < cells_.size(); ++l) {
      next.push_back(cells_[l].step(p, ctx.apply_dropout(next.back().h), prev[l]));
    }
    return next;
  };

  SkipState state;
  for (const auto& cell : cells_) state.layers.push_back(cell.zero_state(tape, batch));
  state.u_hat = column_of(tape, batch, 1.0);
  std::vector<Var> hs;
  hs.reserve(steps);
  for (t = 0; t < steps; ++t) {
    auto r = skiprnn_step(update, gx[t], state, p[wp_], p[bp_], ctx.continuous_gates);
    state = std::move(r.next);
    hs.push_back(state.layers.back().h);
  }
  return stack_steps(hs);
}

// ---------------------------------------------------------------- RHN

RhnEncoder::RhnEncoder(const CellConfig& cfg, ParameterStore& store, Initializer& init) : hidden_(cfg.hidden_size) {
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const std::size_t in = layer_input(l, hidden_);
    const std::string prefix = "rhn." + std::to_string(l);
    Layer layer;
    layer.w = store.add_normal(prefix + ".w", {in, 2 * hidden_}, init.stddev(in), init.rng);
    for (std::size_t m = 0; m < cfg.recurrence_depth; ++m) {
      const std::string micro = prefix + ".micro" + std::to_string(m);
      layer.r.push_back(store.add_normal(micro + ".r", {hidden_, 2 * hidden_}, init.stddev(hidden_), init.rng));
      layer.b.push_back(store.add_filled(micro + ".b", {2 * hidden_}, 0.0));
    }
    layers_.push_back(std::move(layer));
  }
}

Var RhnEncoder::encode(const Bound& p, const Var& inputs, const StepContext& ctx) const {
  Tape& tape = inputs.tape();
  const std::size_t steps = inputs.shape()[0], batch = inputs.shape()[1];
  Var seq = inputs;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    if (l > 0) seq = ctx.apply_dropout(seq);
    auto gx = unstack(project_sequence(seq, p[layer.w]));
    Var s = tape.constant(Tensor::zeros({batch, hidden_}));
    std::vector<Var> hs;
    hs.reserve(steps);
    for (std::size_t t = 0; t < steps; ++t) {
      for (std::size_t m = 0; m < layer.r.size(); ++m) {
        Var pre = add_bias(matmul(s, p[layer.r[m]]), p[layer.b[m]]);
        if (m == 0) pre = pre + gx[t];  // the input only enters the first micro-layer
        s = rhn_micro_step(pre, s);
      }
      hs.push_back(s);
    }
    seq = stack_steps(hs);
  }
  return seq;
}

// ---------------------------------------------------------------- HM-RNN

HmRnnEncoder::HmRnnEncoder(const CellConfig& cfg, ParameterStore& store, Initializer& init)
    : hidden_(cfg.hidden_size) {
  const std::size_t width = 4 * hidden_ + 1;
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const std::size_t in = layer_input(l, hidden_);
    const std::string prefix = "hmrnn." + std::to_string(l);
    Layer layer;
    layer.bottom_up = store.add_normal(prefix + ".w_bottom_up", {in, width}, init.stddev(in), init.rng);
    layer.recurrent = store.add_normal(prefix + ".u_recurrent", {hidden_, width}, init.stddev(hidden_), init.rng);
    if (l + 1 < cfg.num_layers) {
      layer.top_down = store.add_normal(prefix + ".u_top_down", {hidden_, width}, init.stddev(hidden_), init.rng);
    }
    layer.bias = store.add_filled(prefix + ".b", {width}, 0.0);
    layers_.push_back(layer);
  }
}

Var HmRnnEncoder::encode(const Bound& p, const Var& inputs, const StepContext& ctx) const {
  Tape& tape = inputs.tape();
  const std::size_t steps = inputs.shape()[0], batch = inputs.shape()[1];
  const std::size_t layers = layers_.size();
  auto first_proj = unstack(project_sequence(inputs, p[layers_[0].bottom_up]));

  std::vector<Var> h(layers), c(layers), z(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    h[l] = tape.constant(Tensor::zeros({batch, hidden_}));
    c[l] = tape.constant(Tensor::zeros({batch, hidden_}));
    z[l] = column_of(tape, batch, 0.0);
  }
  const Var always = column_of(tape, batch, 1.0);

  std::vector<Var> top;
  top.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    const auto h_prev = h;  // h_{t-1} for the top-down path
    for (std::size_t l = 0; l < layers; ++l) {
      const Layer& layer = layers_[l];
      HmStepInput in;
      if (l == 0) {
        in.bottom_up = first_proj[t];
        in.z_below = always;
      } else {
        in.bottom_up = scale_rows(matmul(ctx.apply_dropout(h[l - 1]), p[layer.bottom_up]), z[l - 1]);
        in.z_below = z[l - 1];
      }
      if (layer.top_down) in.top_down = scale_rows(matmul(h_prev[l + 1], p[*layer.top_down]), z[l]);
      in.recurrent_weight = p[layer.recurrent];
      in.bias = p[layer.bias];
      in.h_prev = h[l];
      in.c_prev = c[l];
      in.z_prev = z[l];
      in.continuous_gate = ctx.continuous_gates;
      auto r = hmrnn_step(in);
      h[l] = r.h;
      c[l] = r.c;
      z[l] = r.z;
    }
    top.push_back(h[layers - 1]);
  }
  return stack_steps(top);
}

// ---------------------------------------------------------------- FS-RNN

FsRnnEncoder::FsRnnEncoder(const CellConfig& cfg, ParameterStore& store, Initializer& init) {
  const std::size_t hidden = cfg.hidden_size;
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const std::string prefix = "fsrnn." + std::to_string(l);
    Layer layer;
    layer.fast.emplace_back(store, prefix + ".fast1", cfg.base_cell, layer_input(l, hidden), hidden, init);
    layer.slow.emplace_back(store, prefix + ".slow", cfg.base_cell, hidden, hidden, init);
    layer.fast.emplace_back(store, prefix + ".fast2", cfg.base_cell, hidden, hidden, init);
    for (std::size_t i = 3; i <= cfg.fast_cells_k; ++i) {
      layer.fast.emplace_back(store, prefix + ".fast" + std::to_string(i), cfg.base_cell, 0, hidden, init);
    }
    layers_.push_back(std::move(layer));
  }
}

Var FsRnnEncoder::encode(const Bound& p, const Var& inputs, const StepContext& ctx) const {
  Tape& tape = inputs.tape();
  const std::size_t steps = inputs.shape()[0], batch = inputs.shape()[1];
  Var seq = inputs;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    if (l > 0) seq = ctx.apply_dropout(seq);
    auto gx = unstack(layer.fast[0].project(p, seq));
    CellState fast = layer.fast[0].zero_state(tape, batch);
    CellState slow = layer.slow[0].zero_state(tape, batch);
    std::vector<Var> hs;
    hs.reserve(steps);
    for (std::size_t t = 0; t < steps; ++t) {
      CellState f1 = layer.fast[0].step_projected(p, gx[t], fast);  // F1(h^{Fk}_{t-1}, x_t)
      slow = layer.slow[0].step(p, f1.h, slow);                     // S(h^S_{t-1}, h^{F1}_t)
      fast = layer.fast[1].step(p, slow.h, f1);                     // F2(h^{F1}_t, h^S_t)
      for (std::size_t i = 2; i < layer.fast.size(); ++i) fast = layer.fast[i].step(p, Var(), fast);
      hs.push_back(fast.h);
    }
    seq = stack_steps(hs);
  }
  return seq;
}

std::unique_ptr<Encoder> make_encoder(const CellConfig& cfg, ParameterStore& store, Initializer& init) {
  switch (cfg.kind) {
    case ArchKind::tcn: return std::make_unique<TcnEncoder>(cfg, store, init);
    case ArchKind::dilated_rnn: return std::make_unique<DilatedRnnEncoder>(cfg, store, init);
    case ArchKind::indrnn: return std::make_unique<IndRnnEncoder>(cfg, store, init);
    case ArchKind::qrnn: return std::make_unique<QrnnEncoder>(cfg, store, init);
    case ArchKind::skiprnn: return std::make_unique<SkipRnnEncoder>(cfg, store, init);
    case ArchKind::rhn: return std::make_unique<RhnEncoder>(cfg, store, init);
    case ArchKind::hmrnn: return std::make_unique<HmRnnEncoder>(cfg, store, init);
    case ArchKind::fsrnn: return std::make_unique<FsRnnEncoder>(cfg, store, init);
  }
  throw std::invalid_argument("unknown architecture");
}

}  // namespace volbench
