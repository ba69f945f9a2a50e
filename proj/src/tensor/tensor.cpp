#include "volbench/tensor.hpp"

#include <atomic>
#include <sstream>
#include <stdexcept>

namespace volbench {

namespace {
std::atomic<std::uint64_t> next_tape_serial{1};
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : shape_(std::move(shape)), values_(std::move(values)), requires_grad_(requires_grad) {
  if (shape_size(shape_) != values_.size()) {
    throw std::invalid_argument("tensor shape " + shape_to_string(shape_) + " does not hold " +
                                std::to_string(values_.size()) + " values");
  }
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return filled(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::filled(Shape shape, double value, bool requires_grad) {
  auto n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  Shape shape{values.size()};
  return Tensor(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values, bool requires_grad) {
  return Tensor({rows, cols}, std::move(values), requires_grad);
}

double Tensor::item() const {
  if (values_.size() != 1) {
    throw std::invalid_argument("item() on tensor of shape " + shape_to_string(shape_));
  }
  return values_[0];
}

void Tensor::set_grad(std::vector<double> grad) {
  if (grad.size() != values_.size()) {
    throw std::invalid_argument("gradient size does not match tensor shape " + shape_to_string(shape_));
  }
  grad_ = std::move(grad);
}

const Shape& Var::shape() const { return tape_->shape_of(node_); }
std::span<const double> Var::values() const { return tape_->value_of(node_); }
bool Var::needs_grad() const { return tape_->needs_grad(node_); }

double Var::item() const {
  auto v = values();
  if (v.size() != 1) throw std::invalid_argument("item() on tensor of shape " + shape_to_string(shape()));
  return v[0];
}

Tensor Var::to_tensor() const {
  auto v = values();
  return Tensor(shape(), std::vector<double>(v.begin(), v.end()));
}

Tape::Tape(bool record_gradients)
    : record_gradients_(record_gradients), serial_(next_tape_serial.fetch_add(1)) {}

Tape::~Tape() {
  for (Tensor* t : watched_) {
    if (t->tape_id_ && t->tape_id_->tape_serial == serial_) t->tape_id_.reset();
  }
}

Var Tape::watch(Tensor& leaf) {
  if (leaf.tape_id_ && leaf.tape_id_->tape_serial == serial_) return Var(this, leaf.tape_id_->node);
  Node node;
  node.shape = leaf.shape_;
  node.value = leaf.values_;
  node.needs_grad = record_gradients_ && leaf.requires_grad_;
  node.leaf = &leaf;
  nodes_.push_back(std::move(node));
  std::size_t id = nodes_.size() - 1;
  leaf.tape_id_ = TapeId{serial_, id};
  watched_.push_back(&leaf);
  return Var(this, id);
}

Var Tape::constant(Tensor value) {
  Node node;
  node.shape = value.shape_;
  node.value = std::move(value.values_);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Shape shape, std::vector<double> values) {
  return constant(Tensor(std::move(shape), std::move(values)));
}

Var Tape::record(Shape shape, std::vector<double> values, std::span<const Var> inputs, BackwardFn backward) {
  if (backward_done_) throw std::logic_error("cannot record on a tape after backward");
  Node node;
  node.shape = std::move(shape);
  node.value = std::move(values);
  if (record_gradients_) {
    for (const auto& in : inputs) {
      if (&in.tape() != this) throw std::invalid_argument("operation mixes values from different tapes");
      if (nodes_[in.node()].needs_grad) node.needs_grad = true;
    }
  }
  if (node.needs_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

std::span<double> Tape::grad_of(std::size_t node) {
  auto& n = nodes_[node];
  if (n.grad.empty() && !n.value.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

void Tape::backward(const Var& loss) {
  if (nodes_.empty()) throw std::logic_error("backward on an empty tape");
  if (backward_done_) throw std::logic_error("backward already called on this tape");
  if (&loss.tape() != this) throw std::invalid_argument("loss was not produced on this tape");
  if (nodes_[loss.node()].value.size() != 1) {
    throw std::invalid_argument("backward requires a scalar loss, got shape " +
                                shape_to_string(nodes_[loss.node()].shape));
  }
  backward_done_ = true;
  if (!nodes_[loss.node()].needs_grad) return;

  grad_of(loss.node())[0] = 1.0;
  for (std::size_t i = loss.node() + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (n.backward && !n.grad.empty()) n.backward(*this, i);
  }
  for (auto& n : nodes_) {
    if (n.leaf && n.needs_grad) {
      if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
      n.leaf->grad_ = n.grad;
    }
  }
}

}  // namespace volbench
