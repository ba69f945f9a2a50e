#include <cmath>
#include <stdexcept>

#include "volbench/neural.hpp"
#include "volbench/training.hpp"

namespace volbench {

double Initializer::stddev(std::size_t fan_in) const {
  if (scheme == InitScheme::standard_normal || fan_in == 0) return 1.0;
  return 1.0 / std::sqrt(static_cast<double>(fan_in));
}

Var StepContext::apply_dropout(const Var& x) const {
  if (!training || dropout <= 0.0) return x;
  if (rng == nullptr) throw std::logic_error("dropout in training mode needs a random generator");
  return x * x.tape().constant(dropout_mask(x.shape(), dropout, *rng));
}

RecurrentCell::RecurrentCell(ParameterStore& store, const std::string& prefix, BaseCellKind kind,
                             std::size_t input_size, std::size_t hidden_size, Initializer& init)
    : kind_(kind), input_size_(input_size), hidden_(hidden_size) {
  const std::size_t g = gate_width();
  if (input_size_ > 0) w_ = store.add_normal(prefix + ".w", {input_size_, g}, init.stddev(input_size_), init.rng);
  u_ = store.add_normal(prefix + ".u", {hidden_, g}, init.stddev(hidden_), init.rng);
  b_ = store.add_filled(prefix + ".b", {g}, 0.0);
}

std::size_t RecurrentCell::parameter_count(BaseCellKind kind, std::size_t input_size, std::size_t hidden) {
  const std::size_t g = (kind == BaseCellKind::gru ? 3 : 4) * hidden;
  return input_size * g + hidden * g + g;
}

CellState RecurrentCell::zero_state(Tape& tape, std::size_t batch) const {
  CellState s;
  s.h = tape.constant(Tensor::zeros({batch, hidden_}));
  if (kind_ == BaseCellKind::lstm) s.c = tape.constant(Tensor::zeros({batch, hidden_}));
  return s;
}

Var RecurrentCell::project(const Bound& p, const Var& x) const {
  if (!w_) throw std::logic_error("cell has no input weights");
  const auto& s = x.shape();
  if (s.empty() || s.back() != input_size_) {
    throw std::invalid_argument("cell input width " + shape_to_string(s) + " does not match input size " +
                                std::to_string(input_size_));
  }
  if (s.size() == 2) return add_bias(matmul(x, p[*w_]), p[b_]);
  const std::size_t rows = x.values().size() / input_size_;
  Var flat = reshape(x, {rows, input_size_});
  Shape out_shape = s;
  out_shape.back() = gate_width();
  return reshape(add_bias(matmul(flat, p[*w_]), p[b_]), std::move(out_shape));
}

Var RecurrentCell::bias_rows(const Bound& p, Tape& tape, std::size_t batch) const {
  return add_bias(tape.constant(Tensor::zeros({batch, gate_width()})), p[b_]);
}

CellState RecurrentCell::step_projected(const Bound& p, const Var& gx, const CellState& state) const {
  const std::size_t h = hidden_;
  Var gh = matmul(state.h, p[u_]);
  if (kind_ == BaseCellKind::gru) {
    Var zr = sigmoid(slice_last(gx, 0, 2 * h) + slice_last(gh, 0, 2 * h));
    Var z = slice_last(zr, 0, h);
    Var r = slice_last(zr, h, h);
    Var n = tanh(slice_last(gx, 2 * h, h) + r * slice_last(gh, 2 * h, h));
    return {interpolate(z, state.h, n), Var()};
  }
  Var pre = gx + gh;
  Var gates = sigmoid(slice_last(pre, 0, 3 * h));
  Var i = slice_last(gates, 0, h);
  Var f = slice_last(gates, h, h);
  Var o = slice_last(gates, 2 * h, h);
  Var g = tanh(slice_last(pre, 3 * h, h));
  Var c = f * state.c + i * g;
  return {o * tanh(c), c};
}

CellState RecurrentCell::step(const Bound& p, const Var& x, const CellState& state) const {
  if (state.h.shape().size() != 2 || state.h.shape()[1] != hidden_) {
    throw std::invalid_argument("cell state " + shape_to_string(state.h.shape()) + " does not match hidden size " +
                                std::to_string(hidden_));
  }
  if (!w_) return step_projected(p, bias_rows(p, state.h.tape(), state.h.shape()[0]), state);
  return step_projected(p, project(p, x), state);
}

Var indrnn_step(const Var& x, const Var& h_prev, const Var& w, const Var& u, const Var& b) {
  if (u.shape().size() != 1) {
    throw std::invalid_argument("IndRNN recurrent weight must be a vector, got " + shape_to_string(u.shape()));
  }
  return relu(add_bias(matmul(x, w) + mul_columns(h_prev, u), b));
}

FoPoolResult fo_pool_step(const Var& z, const Var& f, const Var& o, const Var& c_prev) {
  Var c = interpolate(f, c_prev, z);
  return {c, o * c};
}

SkipStepResult skiprnn_step(const StackedUpdate& update, const Var& x, const SkipState& state, const Var& wp,
                            const Var& bp, bool continuous_gate) {
  for (double v : state.u_hat.values()) {
    if (!(v >= -1e-12 && v <= 1.0 + 1e-12)) throw std::invalid_argument("update probability outside [0,1]");
  }
  Var u = continuous_gate ? state.u_hat : round_ste(state.u_hat);
  auto candidate = update(x, state.layers);
  SkipStepResult out;
  out.u = u;
  for (std::size_t l = 0; l < candidate.size(); ++l) {
    CellState s;
    s.h = interpolate(u, candidate[l].h, state.layers[l].h);
    if (candidate[l].c.valid()) s.c = interpolate(u, candidate[l].c, state.layers[l].c);
    out.next.layers.push_back(s);
  }
  Var delta = sigmoid(add_bias(matmul(out.next.layers.back().h, wp), bp));
  out.delta_u_hat = delta;
  Var accumulated = state.u_hat + minimum(delta, one_minus(state.u_hat));
  out.next.u_hat = interpolate(u, delta, accumulated);
  return out;
}

Var highway_combine(const Var& h, const Var& t, const Var& s) { return interpolate(t, h, s); }

Var rhn_micro_step(const Var& pre, const Var& s) {
  const std::size_t h = s.shape().back();
  return highway_combine(tanh(slice_last(pre, 0, h)), sigmoid(slice_last(pre, h, h)), s);
}

HmOperation select_hm_operation(double z_prev, double z_below) {
  auto is_bit = [](double z) { return z == 0.0 || z == 1.0; };
  if (!is_bit(z_prev) || !is_bit(z_below)) throw std::invalid_argument("boundary bits must be 0 or 1");
  if (z_prev == 1.0) return HmOperation::flush;
  return z_below == 1.0 ? HmOperation::update : HmOperation::copy;
}

HmStepResult hmrnn_step(const HmStepInput& in) {
  if (!in.continuous_gate) {
    for (double z : in.z_prev.values()) select_hm_operation(z, 0.0);
    for (double z : in.z_below.values()) select_hm_operation(0.0, z);
  }
  const std::size_t h = in.h_prev.shape().back();
  Var pre = matmul(in.h_prev, in.recurrent_weight) + in.bottom_up;
  if (in.top_down.valid()) pre = pre + in.top_down;
  pre = add_bias(pre, in.bias);

  Var gates = sigmoid(slice_last(pre, 0, 3 * h));
  Var f = slice_last(gates, 0, h);
  Var i = slice_last(gates, h, h);
  Var o = slice_last(gates, 2 * h, h);
  Var g = tanh(slice_last(pre, 3 * h, h));
  Var boundary = hard_sigmoid(slice_last(pre, 4 * h, 1));

  Var fresh = i * g;
  Var updated = f * in.c_prev + fresh;
  // FLUSH when the own previous bit is set, else UPDATE when the layer below
  // closed a segment, else COPY.
  Var c = interpolate(in.z_prev, fresh, interpolate(in.z_below, updated, in.c_prev));
  Var h_new = o * tanh(c);
  Var h_out = interpolate(in.z_prev, h_new, interpolate(in.z_below, h_new, in.h_prev));
  Var z = in.continuous_gate ? boundary : round_ste(boundary);
  return {h_out, c, z};
}

}  // namespace volbench
