#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "volbench/tensor.hpp"

namespace volbench {

enum class ArchKind { tcn, dilated_rnn, indrnn, qrnn, skiprnn, rhn, hmrnn, fsrnn };
enum class BaseCellKind { gru, lstm };

// Table order: convolutional first, then the recurrent variants.
inline constexpr std::array<ArchKind, 8> kAllArchKinds = {
    ArchKind::tcn,     ArchKind::dilated_rnn, ArchKind::indrnn, ArchKind::qrnn,
    ArchKind::skiprnn, ArchKind::hmrnn,       ArchKind::fsrnn,  ArchKind::rhn};

std::string_view to_string(ArchKind kind);
std::string_view display_name(ArchKind kind);
std::optional<ArchKind> parse_arch_kind(std::string_view name);
std::string_view to_string(BaseCellKind kind);
std::optional<BaseCellKind> parse_base_cell(std::string_view name);

struct CellConfig {
  ArchKind kind = ArchKind::tcn;
  std::size_t hidden_size = 32;
  std::size_t num_layers = 2;
  std::size_t kernel_size = 5;
  std::size_t dilation_base = 2;
  BaseCellKind base_cell = BaseCellKind::gru;
  std::size_t recurrence_depth = 4;
  std::size_t fast_cells_k = 2;
  double dropout = 0.2;

  static CellConfig defaults(ArchKind kind);
  // Throws ConfigError naming the violated constraint.
  void validate() const;
  std::string to_json() const;
  static CellConfig from_json(std::string_view json);
};

enum class InitScheme {
  scaled_normal,    // N(0, 1/fan_in)
  standard_normal,  // N(0, 1) regardless of fan-in
};

struct Parameter {
  std::string name;
  Tensor value;
  // Projected back into [lo, hi] after every optimiser step.
  std::optional<std::pair<double, double>> bounds;
};

class ParameterStore {
 public:
  std::size_t add_normal(std::string name, Shape shape, double stddev, std::mt19937_64& rng);
  std::size_t add_uniform(std::string name, Shape shape, double lo, double hi, std::mt19937_64& rng);
  std::size_t add_filled(std::string name, Shape shape, double value);
  void set_bounds(std::size_t index, double lo, double hi);

  std::vector<Parameter>& items() { return items_; }
  const std::vector<Parameter>& items() const { return items_; }
  Parameter& operator[](std::size_t i) { return items_[i]; }
  const Parameter& operator[](std::size_t i) const { return items_[i]; }
  Parameter* find(std::string_view name);
  std::size_t size() const { return items_.size(); }
  std::size_t scalar_count() const;

  std::vector<Tensor> snapshot() const;
  void restore(const std::vector<Tensor>& values);

 private:
  std::vector<Parameter> items_;
};

// Parameters as seen by one tape, in store order.
using Bound = std::vector<Var>;
Bound bind_parameters(Tape& tape, ParameterStore& store);
Bound bind_constants(Tape& tape, const ParameterStore& store);

struct StepContext {
  bool training = false;
  double dropout = 0.0;
  std::mt19937_64* rng = nullptr;
  // Replaces hard binarisation with its continuous surrogate so that finite
  // differences see the same function the straight-through gradient assumes.
  bool continuous_gates = false;

  // Inverted dropout when training; identity otherwise.
  Var apply_dropout(const Var& x) const;
};

// Initialisation draws: fan-in scaled or unit normal.
struct Initializer {
  InitScheme scheme = InitScheme::scaled_normal;
  std::mt19937_64 rng;
  double stddev(std::size_t fan_in) const;
};

struct CellState {
  Var h;
  Var c;  // lstm only
};

/// GRU or LSTM cell. Input projections can be computed for a whole sequence
/// up front, leaving only the recurrent product inside the time loop.
class RecurrentCell {
 public:
  RecurrentCell(ParameterStore& store, const std::string& prefix, BaseCellKind kind, std::size_t input_size,
                std::size_t hidden_size, Initializer& init);

  BaseCellKind kind() const { return kind_; }
  std::size_t input_size() const { return input_size_; }
  std::size_t hidden_size() const { return hidden_; }
  std::size_t gate_width() const { return (kind_ == BaseCellKind::gru ? 3 : 4) * hidden_; }

  CellState zero_state(Tape& tape, std::size_t batch) const;
  // x W + b for x [T,B,in] (or [B,in]); a cell with no input returns b per row.
  Var project(const Bound& p, const Var& x) const;
  Var bias_rows(const Bound& p, Tape& tape, std::size_t batch) const;
  CellState step_projected(const Bound& p, const Var& gx, const CellState& state) const;
  CellState step(const Bound& p, const Var& x, const CellState& state) const;

  static std::size_t parameter_count(BaseCellKind kind, std::size_t input_size, std::size_t hidden);

 private:
  BaseCellKind kind_;
  std::size_t input_size_;
  std::size_t hidden_;
  std::optional<std::size_t> w_;
  std::size_t u_;
  std::size_t b_;
};

// Runs c_t = step(t, c_{t-d}), with the zero state for t < d.
template <typename State, typename Step>
std::vector<State> dilated_recurrence(std::size_t steps, std::size_t dilation, const State& zero, Step&& step) {
  std::vector<State> states;
  states.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    const State& prev = t >= dilation ? states[t - dilation] : zero;
    states.push_back(step(t, prev));
  }
  return states;
}

std::vector<std::size_t> tcn_dilations(const CellConfig& cfg);
std::vector<std::size_t> dilated_rnn_dilations(const CellConfig& cfg);
// 1 + sum over conv layers of (k-1) * d_l.
std::size_t tcn_receptive_field(const CellConfig& cfg);

// h = relu(x W + u * h_prev + b); u holds one recurrent weight per neuron.
Var indrnn_step(const Var& x, const Var& h_prev, const Var& w, const Var& u, const Var& b);

struct FoPoolResult {
  Var c;
  Var h;
};
// c = f * c_prev + (1 - f) * z, h = o * c.
FoPoolResult fo_pool_step(const Var& z, const Var& f, const Var& o, const Var& c_prev);

struct SkipState {
  std::vector<CellState> layers;
  Var u_hat;  // [B,1] update probability
};
struct SkipStepResult {
  SkipState next;
  Var u;              // binary update gate used at this step
  Var delta_u_hat;
};
using StackedUpdate = std::function<std::vector<CellState>(const Var& x, const std::vector<CellState>& prev)>;
SkipStepResult skiprnn_step(const StackedUpdate& update, const Var& x, const SkipState& state, const Var& wp,
                            const Var& bp, bool continuous_gate = false);

// y = h * t + s * (1 - t): highway layer with the carry gate tied to 1 - t.
Var highway_combine(const Var& h, const Var& t, const Var& s);
// One recurrence micro-layer: pre is [B,2H] holding the transform and gate
// pre-activations.
Var rhn_micro_step(const Var& pre, const Var& s);

enum class HmOperation { copy, update, flush };
HmOperation select_hm_operation(double z_prev, double z_below);

struct HmStepInput {
  Var bottom_up;        // z_below * (h_below W), [B,4H+1]
  Var top_down;         // z_prev * (h_above_prev U), or invalid for the top layer
  Var recurrent_weight; // [H,4H+1]
  Var bias;             // [4H+1]
  Var h_prev;
  Var c_prev;
  Var z_prev;           // [B,1]
  Var z_below;          // [B,1]
  bool continuous_gate = false;
};
struct HmStepResult {
  Var h;
  Var c;
  Var z;
};
HmStepResult hmrnn_step(const HmStepInput& in);

inline constexpr double kSigmaFloor = 1e-4;

/// One-hidden-layer relu MLP followed by softplus plus a floor, so sigma > 0.
class VolatilityHead {
 public:
  VolatilityHead() = default;
  VolatilityHead(ParameterStore& store, std::size_t hidden_size, Initializer& init);
  Var forward(const Bound& p, const Var& h) const;
  static double sigma_from_output(double mlp_output);
  static std::size_t parameter_count(std::size_t hidden_size);

 private:
  std::size_t w1_ = 0, b1_ = 0, w2_ = 0, b2_ = 0;
};

class Encoder {
 public:
  virtual ~Encoder() = default;
  // inputs [T,B,1] -> top hidden sequence [T,B,H]
  virtual Var encode(const Bound& p, const Var& inputs, const StepContext& ctx) const = 0;
};

/// One benchmarked network: encoder for the configured architecture plus the
/// volatility head. Inputs at step t are the return observed before t, so
/// sigma_t never depends on x_t or later.
class SequenceModel {
 public:
  SequenceModel(CellConfig cfg, std::uint64_t seed, InitScheme scheme = InitScheme::scaled_normal);

  const CellConfig& config() const { return cfg_; }
  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }
  std::size_t parameter_count() const { return store_.scalar_count(); }

  // inputs [T,B,1] -> sigma [T,B,1]
  Var forward(Tape& tape, const Tensor& inputs, const StepContext& ctx);
  Var forward(Tape& tape, const Bound& p, const Tensor& inputs, const StepContext& ctx) const;
  // sigma_t for every t, each computed from x_0..x_{t-1}.
  std::vector<double> sigma_path(std::span<const double> x) const;

 private:
  CellConfig cfg_;
  ParameterStore store_;
  std::unique_ptr<Encoder> encoder_;
  VolatilityHead head_;
};

// [T,1,1] tensor whose step t holds x_{t-1} (zero at t = 0).
Tensor lagged_inputs(std::span<const double> x);

// Closed-form scalar parameter count implied by a configuration.
std::size_t expected_parameter_count(const CellConfig& cfg);

// Binary parameter file: magic, config JSON, then name/shape/values records,
// little-endian with 64-bit floats.
void save_model(std::ostream& out, const SequenceModel& model);
SequenceModel load_model(std::istream& in);

}  // namespace volbench
