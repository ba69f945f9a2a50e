#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace volbench {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Identifies a node on one specific tape. The serial distinguishes tapes so a
// stale id from a destroyed tape never aliases a live one.
struct TapeId {
  std::uint64_t tape_serial = 0;
  std::size_t node = 0;
};

/// Dense row-major array of doubles with an optional gradient buffer.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                       bool requires_grad = false);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double item() const;

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool flag) { requires_grad_ = flag; }

  const std::optional<std::vector<double>>& grad() const { return grad_; }
  void set_grad(std::vector<double> grad);
  void clear_grad() { grad_.reset(); }

  const std::optional<TapeId>& tape_id() const { return tape_id_; }

 private:
  friend class Tape;

  Shape shape_;
  std::vector<double> values_;
  bool requires_grad_ = false;
  std::optional<std::vector<double>> grad_;
  std::optional<TapeId> tape_id_;
};

class Tape;

/// Handle to a value recorded on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t node) : tape_(tape), node_(node) {}

  Tape& tape() const { return *tape_; }
  std::size_t node() const { return node_; }
  bool valid() const { return tape_ != nullptr; }

  const Shape& shape() const;
  std::span<const double> values() const;
  double item() const;
  bool needs_grad() const;
  Tensor to_tensor() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t node_ = 0;
};

/// Records operations in execution order and replays them in reverse for
/// gradients. A tape is single-use: backward may be called once.
///
/// Tensors passed to watch() are referenced, not copied, for gradient
/// write-back, so they must outlive the tape.
class Tape {
 public:
  // Propagates the gradient of node `self` into its inputs.
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(bool record_gradients = true);
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers a leaf. When the tensor requires grad, backward() writes
  /// d(loss)/d(leaf) into its grad slot. Watching twice returns the same node.
  Var watch(Tensor& leaf);
  Var constant(Tensor value);
  Var constant(Shape shape, std::vector<double> values);

  /// Appends an operation node. `backward` is dropped when no input needs a
  /// gradient or the tape does not record gradients.
  Var record(Shape shape, std::vector<double> values, std::span<const Var> inputs,
             BackwardFn backward);

  void backward(const Var& loss);

  bool recording() const { return record_gradients_; }
  bool backward_done() const { return backward_done_; }
  std::size_t size() const { return nodes_.size(); }
  std::uint64_t serial() const { return serial_; }

  const Shape& shape_of(std::size_t node) const { return nodes_[node].shape; }
  std::span<const double> value_of(std::size_t node) const { return nodes_[node].value; }
  bool needs_grad(std::size_t node) const { return nodes_[node].needs_grad; }
  // Gradient buffer of a node, allocated (zeroed) on first access.
  std::span<double> grad_of(std::size_t node);

 private:
  struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool needs_grad = false;
    BackwardFn backward;
    Tensor* leaf = nullptr;
  };

  std::deque<Node> nodes_;
  std::vector<Tensor*> watched_;
  bool record_gradients_ = true;
  bool backward_done_ = false;
  std::uint64_t serial_ = 0;
};

enum class Activation { sigmoid, tanh, relu, softplus };

// Matrix product of [m,k] and [k,n].
Var matmul(const Var& a, const Var& b);

// Elementwise arithmetic on equal shapes. Either operand may also be a
// single-element tensor, which is broadcast.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);

Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double offset);
Var one_minus(const Var& a);

// [m,n] + [n]: the bias row is added to every row.
Var add_bias(const Var& a, const Var& bias);
// [m,n] * [n]: column j of every row is scaled by v[j].
Var mul_columns(const Var& a, const Var& v);
// [m,n] * [m,1]: row i is scaled by s[i].
Var scale_rows(const Var& a, const Var& s);

Var apply_activation(const Var& x, Activation kind);
Var sigmoid(const Var& x);
Var tanh(const Var& x);
Var relu(const Var& x);
Var softplus(const Var& x);
Var hard_sigmoid(const Var& x, double slope = 1.0);

// Rounds to the nearest integer; the gradient passes through unchanged.
Var round_ste(const Var& x);
Var minimum(const Var& a, const Var& b);

/// gate * a + (1 - gate) * b. `gate` has the shape of `a` or is a column
/// [m,1] broadcast across the row. Where the gate is exactly 1 or 0 the
/// result is a bit-identical copy of a or b.
Var interpolate(const Var& gate, const Var& a, const Var& b);

// Columns [start, start+len) of the last dimension.
Var slice_last(const Var& x, std::size_t start, std::size_t len);
Var concat_last(std::span<const Var> parts);
Var reshape(const Var& x, Shape shape);

// Sequence helpers for [T,B,C] tensors.
Var time_step(const Var& seq, std::size_t t);
Var stack_steps(std::span<const Var> steps);

/// Causal dilated convolution: out(s) = sum_i f(i) * x(s - d*i), with zero
/// padding on the left, so the output has the input's length.
/// Accepts x [T] with f [k], or x [T,B,Cin] with f [k,Cin,Cout].
Var conv1d_causal_dilated(const Var& x, const Var& filter, std::size_t dilation);

/// w = g * v / ||v||, normalised per output channel (last dimension of v).
Var weight_norm(const Var& v, const Var& g);

Var sum(const Var& x);
Var mean(const Var& x);

}  // namespace volbench
