#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "volbench/tensor.hpp"

namespace volbench {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap as_matrix(std::span<const double> v, std::size_t rows, std::size_t cols) {
  return ConstMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MutMap as_matrix(std::span<double> v, std::size_t rows, std::size_t cols) {
  return MutMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void require_same_tape(const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw std::invalid_argument("operands live on different tapes");
}

std::size_t last_dim(const Shape& s) { return s.empty() ? 1 : s.back(); }

double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_value(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

enum class BinaryKind { add, sub, mul };

Var binary(const Var& a, const Var& b, BinaryKind kind) {
  require_same_tape(a, b);
  const auto av = a.values();
  const auto bv = b.values();
  const bool same = a.shape() == b.shape();
  const bool a_scalar = av.size() == 1 && !same;
  const bool b_scalar = bv.size() == 1 && !same;
  if (!same && !a_scalar && !b_scalar) {
    throw std::invalid_argument("elementwise shape mismatch: " + shape_to_string(a.shape()) + " vs " +
                                shape_to_string(b.shape()));
  }
  const Shape out_shape = a_scalar ? b.shape() : a.shape();
  const std::size_t n = shape_size(out_shape);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double x = av[a_scalar ? 0 : i];
    double y = bv[b_scalar ? 0 : i];
    switch (kind) {
      case BinaryKind::add: out[i] = x + y; break;
      case BinaryKind::sub: out[i] = x - y; break;
      case BinaryKind::mul: out[i] = x * y; break;
    }
  }
  const std::size_t ia = a.node(), ib = b.node();
  Var inputs[] = {a, b};
  return a.tape().record(out_shape, std::move(out), inputs,
                         [ia, ib, a_scalar, b_scalar, kind, n](Tape& t, std::size_t self) {
                           auto g = t.grad_of(self);
                           if (t.needs_grad(ia)) {
                             auto ga = t.grad_of(ia);
                             auto bv = t.value_of(ib);
                             for (std::size_t i = 0; i < n; ++i) {
                               double d = kind == BinaryKind::mul ? g[i] * bv[b_scalar ? 0 : i] : g[i];
                               ga[a_scalar ? 0 : i] += d;
                             }
                           }
                           if (t.needs_grad(ib)) {
                             auto gb = t.grad_of(ib);
                             auto av = t.value_of(ia);
                             for (std::size_t i = 0; i < n; ++i) {
                               double d = g[i];
                               if (kind == BinaryKind::sub) d = -d;
                               if (kind == BinaryKind::mul) d *= av[a_scalar ? 0 : i];
                               gb[b_scalar ? 0 : i] += d;
                             }
                           }
                         });
}

// Elementwise unary op whose derivative is a function of input and output.
template <typename Forward, typename Derivative>
Var unary(const Var& x, Forward f, Derivative df) {
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  const std::size_t ix = x.node();
  Var inputs[] = {x};
  return x.tape().record(x.shape(), std::move(out), inputs, [ix, df](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    auto y = t.value_of(self);
    auto xv = t.value_of(ix);
    auto gx = t.grad_of(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xv[i], y[i]);
  });
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  require_same_tape(a, b);
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as.size() != 2 || bs.size() != 2 || as[1] != bs[0]) {
    throw std::invalid_argument("matmul shape mismatch: " + shape_to_string(as) + " x " + shape_to_string(bs));
  }
  const std::size_t m = as[0], k = as[1], n = bs[1];
  std::vector<double> out(m * n);
  as_matrix(std::span<double>(out), m, n).noalias() = as_matrix(a.values(), m, k) * as_matrix(b.values(), k, n);
  const std::size_t ia = a.node(), ib = b.node();
  Var inputs[] = {a, b};
  return a.tape().record({m, n}, std::move(out), inputs, [ia, ib, m, k, n](Tape& t, std::size_t self) {
    auto g = as_matrix(std::span<const double>(t.grad_of(self)), m, n);
    if (t.needs_grad(ia)) {
      as_matrix(t.grad_of(ia), m, k).noalias() += g * as_matrix(t.value_of(ib), k, n).transpose();
    }
    if (t.needs_grad(ib)) {
      as_matrix(t.grad_of(ib), k, n).noalias() += as_matrix(t.value_of(ia), m, k).transpose() * g;
    }
  });
}

Var add(const Var& a, const Var& b) { return binary(a, b, BinaryKind::add); }
Var sub(const Var& a, const Var& b) { return binary(a, b, BinaryKind::sub); }
Var mul(const Var& a, const Var& b) { return binary(a, b, BinaryKind::mul); }
Var operator+(const Var& a, const Var& b) { return add(a, b); }
Var operator-(const Var& a, const Var& b) { return sub(a, b); }
Var operator*(const Var& a, const Var& b) { return mul(a, b); }

Var scale(const Var& a, double factor) {
  return unary(a, [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Var add_scalar(const Var& a, double offset) {
  return unary(a, [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

Var one_minus(const Var& a) {
  return unary(a, [](double x) { return 1.0 - x; }, [](double, double) { return -1.0; });
}

Var add_bias(const Var& a, const Var& bias) {
  require_same_tape(a, bias);
  const std::size_t n = last_dim(a.shape());
  if (bias.values().size() != n || bias.shape().size() != 1) {
    throw std::invalid_argument("bias shape " + shape_to_string(bias.shape()) + " does not match rows of " +
                                shape_to_string(a.shape()));
  }
  const auto av = a.values();
  const auto bv = bias.values();
  const std::size_t rows = av.size() / n;
  std::vector<double> out(av.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = av[r * n + j] + bv[j];
  const std::size_t ia = a.node(), ib = bias.node();
  Var inputs[] = {a, bias};
  return a.tape().record(a.shape(), std::move(out), inputs, [ia, ib, rows, n](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    if (t.needs_grad(ia)) {
      auto ga = t.grad_of(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.needs_grad(ib)) {
      auto gb = t.grad_of(ib);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) gb[j] += g[r * n + j];
    }
  });
}

Var mul_columns(const Var& a, const Var& v) {
  require_same_tape(a, v);
  const std::size_t n = last_dim(a.shape());
  if (v.shape().size() != 1 || v.values().size() != n) {
    throw std::invalid_argument("column scale " + shape_to_string(v.shape()) + " does not match " +
                                shape_to_string(a.shape()));
  }
  const auto av = a.values();
  const auto vv = v.values();
  const std::size_t rows = av.size() / n;
  std::vector<double> out(av.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = av[r * n + j] * vv[j];
  const std::size_t ia = a.node(), iv = v.node();
  Var inputs[] = {a, v};
  return a.tape().record(a.shape(), std::move(out), inputs, [ia, iv, rows, n](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    if (t.needs_grad(ia)) {
      auto ga = t.grad_of(ia);
      auto vv = t.value_of(iv);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) ga[r * n + j] += g[r * n + j] * vv[j];
    }
    if (t.needs_grad(iv)) {
      auto gv = t.grad_of(iv);
      auto av = t.value_of(ia);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) gv[j] += g[r * n + j] * av[r * n + j];
    }
  });
}

Var scale_rows(const Var& a, const Var& s) {
  require_same_tape(a, s);
  const std::size_t n = last_dim(a.shape());
  const auto av = a.values();
  const std::size_t rows = av.size() / n;
  if (s.values().size() != rows) {
    throw std::invalid_argument("row scale " + shape_to_string(s.shape()) + " does not match " +
                                shape_to_string(a.shape()));
  }
  const auto sv = s.values();
  std::vector<double> out(av.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = av[r * n + j] * sv[r];
  const std::size_t ia = a.node(), is = s.node();
  Var inputs[] = {a, s};
  return a.tape().record(a.shape(), std::move(out), inputs, [ia, is, rows, n](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    if (t.needs_grad(ia)) {
      auto ga = t.grad_of(ia);
      auto sv = t.value_of(is);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) ga[r * n + j] += g[r * n + j] * sv[r];
    }
    if (t.needs_grad(is)) {
      auto gs = t.grad_of(is);
      auto av = t.value_of(ia);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) gs[r] += g[r * n + j] * av[r * n + j];
    }
  });
}

Var apply_activation(const Var& x, Activation kind) {
  switch (kind) {
    case Activation::sigmoid: return sigmoid(x);
    case Activation::tanh: return tanh(x);
    case Activation::relu: return relu(x);
    case Activation::softplus: return softplus(x);
  }
  throw std::invalid_argument("unsupported activation");
}

Var sigmoid(const Var& x) {
  return unary(x, sigmoid_value, [](double, double y) { return y * (1.0 - y); });
}

Var tanh(const Var& x) {
  return unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var relu(const Var& x) {
  return unary(x, [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Var softplus(const Var& x) {
  return unary(x, softplus_value, [](double v, double) { return sigmoid_value(v); });
}

Var hard_sigmoid(const Var& x, double slope) {
  return unary(
      x, [slope](double v) { return std::clamp((slope * v + 1.0) * 0.5, 0.0, 1.0); },
      [slope](double v, double) {
        double u = (slope * v + 1.0) * 0.5;
        return (u > 0.0 && u < 1.0) ? 0.5 * slope : 0.0;
      });
}

Var round_ste(const Var& x) {
  return unary(x, [](double v) { return std::round(v); }, [](double, double) { return 1.0; });
}

Var minimum(const Var& a, const Var& b) {
  require_same_tape(a, b);
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("minimum shape mismatch: " + shape_to_string(a.shape()) + " vs " +
                                shape_to_string(b.shape()));
  }
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = std::min(av[i], bv[i]);
  const std::size_t ia = a.node(), ib = b.node();
  Var inputs[] = {a, b};
  return a.tape().record(a.shape(), std::move(out), inputs, [ia, ib](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    auto av = t.value_of(ia);
    auto bv = t.value_of(ib);
    for (std::size_t i = 0; i < g.size(); ++i) {
      // Ties route the gradient to the first operand.
      bool first = av[i] <= bv[i];
      if (first && t.needs_grad(ia)) t.grad_of(ia)[i] += g[i];
      if (!first && t.needs_grad(ib)) t.grad_of(ib)[i] += g[i];
    }
  });
}

Var interpolate(const Var& gate, const Var& a, const Var& b) {
  require_same_tape(gate, a);
  require_same_tape(a, b);
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("interpolate shape mismatch: " + shape_to_string(a.shape()) + " vs " +
                                shape_to_string(b.shape()));
  }
  const auto av = a.values();
  const auto bv = b.values();
  const auto gv = gate.values();
  const std::size_t n = av.size();
  const std::size_t cols = last_dim(a.shape());
  bool per_row = false;
  if (gate.shape() != a.shape()) {
    if (gv.size() * cols != n || last_dim(gate.shape()) != 1) {
      throw std::invalid_argument("gate shape " + shape_to_string(gate.shape()) + " does not match " +
                                  shape_to_string(a.shape()));
    }
    per_row = true;
  }
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double g = gv[per_row ? i / cols : i];
    if (g == 1.0) {
      out[i] = av[i];
    } else if (g == 0.0) {
      out[i] = bv[i];
    } else {
      out[i] = g * av[i] + (1.0 - g) * bv[i];
    }
  }
  const std::size_t ig = gate.node(), ia = a.node(), ib = b.node();
  Var inputs[] = {gate, a, b};
  return a.tape().record(a.shape(), std::move(out), inputs, [ig, ia, ib, per_row, cols](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    auto gv = t.value_of(ig);
    const std::size_t n = g.size();
    if (t.needs_grad(ia)) {
      auto ga = t.grad_of(ia);
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * gv[per_row ? i / cols : i];
    }
    if (t.needs_grad(ib)) {
      auto gb = t.grad_of(ib);
      for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * (1.0 - gv[per_row ? i / cols : i]);
    }
    if (t.needs_grad(ig)) {
      auto gg = t.grad_of(ig);
      auto av = t.value_of(ia);
      auto bv = t.value_of(ib);
      for (std::size_t i = 0; i < n; ++i) gg[per_row ? i / cols : i] += g[i] * (av[i] - bv[i]);
    }
  });
}

Var slice_last(const Var& x, std::size_t start, std::size_t len) {
  const std::size_t cols = last_dim(x.shape());
  if (start + len > cols || len == 0) {
    throw std::invalid_argument("slice [" + std::to_string(start) + "," + std::to_string(start + len) +
                                ") out of range for " + shape_to_string(x.shape()));
  }
  const auto xv = x.values();
  const std::size_t rows = xv.size() / cols;
  std::vector<double> out(rows * len);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(r * cols + start), len,
                out.begin() + static_cast<std::ptrdiff_t>(r * len));
  Shape shape = x.shape();
  shape.back() = len;
  const std::size_t ix = x.node();
  Var inputs[] = {x};
  return x.tape().record(std::move(shape), std::move(out), inputs,
                         [ix, rows, cols, start, len](Tape& t, std::size_t self) {
                           auto g = t.grad_of(self);
                           auto gx = t.grad_of(ix);
                           for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t j = 0; j < len; ++j) gx[r * cols + start + j] += g[r * len + j];
                         });
}

Var concat_last(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat of zero tensors");
  const Shape& first = parts[0].shape();
  const std::size_t rows = parts[0].values().size() / last_dim(first);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_same_tape(parts[0], p);
    Shape lead(p.shape().begin(), p.shape().end() - 1);
    if (lead != Shape(first.begin(), first.end() - 1)) {
      throw std::invalid_argument("concat shape mismatch: " + shape_to_string(first) + " vs " +
                                  shape_to_string(p.shape()));
    }
    widths.push_back(last_dim(p.shape()));
    total += widths.back();
  }
  std::vector<double> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto pv = parts[k].values();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(r * widths[k]), widths[k],
                  out.begin() + static_cast<std::ptrdiff_t>(r * total + offset));
    offset += widths[k];
  }
  Shape shape = first;
  shape.back() = total;
  std::vector<std::size_t> ids;
  for (const auto& p : parts) ids.push_back(p.node());
  return parts[0].tape().record(std::move(shape), std::move(out), parts,
                                [ids, widths, rows, total](Tape& t, std::size_t self) {
                                  auto g = t.grad_of(self);
                                  std::size_t offset = 0;
                                  for (std::size_t k = 0; k < ids.size(); ++k) {
                                    if (t.needs_grad(ids[k])) {
                                      auto gp = t.grad_of(ids[k]);
                                      for (std::size_t r = 0; r < rows; ++r)
                                        for (std::size_t j = 0; j < widths[k]; ++j)
                                          gp[r * widths[k] + j] += g[r * total + offset + j];
                                    }
                                    offset += widths[k];
                                  }
                                });
}

Var reshape(const Var& x, Shape shape) {
  if (shape_size(shape) != x.values().size()) {
    throw std::invalid_argument("cannot reshape " + shape_to_string(x.shape()) + " to " + shape_to_string(shape));
  }
  auto xv = x.values();
  const std::size_t ix = x.node();
  Var inputs[] = {x};
  return x.tape().record(std::move(shape), std::vector<double>(xv.begin(), xv.end()), inputs,
                         [ix](Tape& t, std::size_t self) {
                           auto g = t.grad_of(self);
                           auto gx = t.grad_of(ix);
                           for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                         });
}

Var time_step(const Var& seq, std::size_t t) {
  const auto& s = seq.shape();
  if (s.size() != 3 || t >= s[0]) {
    throw std::invalid_argument("time_step " + std::to_string(t) + " on " + shape_to_string(s));
  }
  const std::size_t width = s[1] * s[2];
  auto sv = seq.values();
  std::vector<double> out(sv.begin() + static_cast<std::ptrdiff_t>(t * width),
                          sv.begin() + static_cast<std::ptrdiff_t>((t + 1) * width));
  const std::size_t is = seq.node();
  Var inputs[] = {seq};
  return seq.tape().record({s[1], s[2]}, std::move(out), inputs, [is, t, width](Tape& tp, std::size_t self) {
    auto g = tp.grad_of(self);
    auto gs = tp.grad_of(is);
    for (std::size_t i = 0; i < width; ++i) gs[t * width + i] += g[i];
  });
}

Var stack_steps(std::span<const Var> steps) {
  if (steps.empty()) throw std::invalid_argument("stack of zero steps");
  const Shape& step_shape = steps[0].shape();
  if (step_shape.size() != 2) throw std::invalid_argument("stack_steps expects [B,C] steps");
  const std::size_t width = shape_size(step_shape);
  std::vector<double> out;
  out.reserve(width * steps.size());
  std::vector<std::size_t> ids;
  ids.reserve(steps.size());
  for (const auto& s : steps) {
    require_same_tape(steps[0], s);
    if (s.shape() != step_shape) {
      throw std::invalid_argument("stack_steps shape mismatch: " + shape_to_string(step_shape) + " vs " +
                                  shape_to_string(s.shape()));
    }
    auto v = s.values();
    out.insert(out.end(), v.begin(), v.end());
    ids.push_back(s.node());
  }
  return steps[0].tape().record({steps.size(), step_shape[0], step_shape[1]}, std::move(out), steps,
                                [ids, width](Tape& t, std::size_t self) {
                                  auto g = t.grad_of(self);
                                  for (std::size_t k = 0; k < ids.size(); ++k) {
                                    if (!t.needs_grad(ids[k])) continue;
                                    auto gs = t.grad_of(ids[k]);
                                    for (std::size_t i = 0; i < width; ++i) gs[i] += g[k * width + i];
                                  }
                                });
}

Var conv1d_causal_dilated(const Var& x, const Var& filter, std::size_t dilation) {
  require_same_tape(x, filter);
  if (dilation == 0) throw std::invalid_argument("dilation must be positive");
  const auto& xs = x.shape();
  const auto& fs = filter.shape();
  std::size_t steps = 0, batch = 1, cin = 1, cout = 1, taps = 0;
  Shape out_shape;
  if (xs.size() == 1 && fs.size() == 1) {
    steps = xs[0];
    taps = fs[0];
    out_shape = {steps};
  } else if (xs.size() == 3 && fs.size() == 3 && fs[1] == xs[2]) {
    steps = xs[0];
    batch = xs[1];
    cin = xs[2];
    taps = fs[0];
    cout = fs[2];
    out_shape = {steps, batch, cout};
  } else {
    throw std::invalid_argument("conv1d shape mismatch: input " + shape_to_string(xs) + ", filter " +
                                shape_to_string(fs));
  }
  if (taps == 0) throw std::invalid_argument("filter length must be positive");

  const std::size_t rows = steps * batch;
  std::vector<double> out(rows * cout, 0.0);
  auto xv = x.values();
  auto fv = filter.values();
  auto out_m = as_matrix(std::span<double>(out), rows, cout);
  auto x_m = as_matrix(xv, rows, cin);
  for (std::size_t i = 0; i < taps; ++i) {
    const std::size_t shift = dilation * i;
    if (shift >= steps) break;
    const auto n = static_cast<Eigen::Index>((steps - shift) * batch);
    auto w = as_matrix(fv.subspan(i * cin * cout, cin * cout), cin, cout);
    out_m.bottomRows(n).noalias() += x_m.topRows(n) * w;
  }

  const std::size_t ix = x.node(), iflt = filter.node();
  Var inputs[] = {x, filter};
  return x.tape().record(
      std::move(out_shape), std::move(out), inputs,
      [ix, iflt, steps, batch, cin, cout, taps, dilation, rows](Tape& t, std::size_t self) {
        auto g = as_matrix(std::span<const double>(t.grad_of(self)), rows, cout);
        auto fv = t.value_of(iflt);
        auto xv = as_matrix(t.value_of(ix), rows, cin);
        for (std::size_t i = 0; i < taps; ++i) {
          const std::size_t shift = dilation * i;
          if (shift >= steps) break;
          const auto n = static_cast<Eigen::Index>((steps - shift) * batch);
          if (t.needs_grad(ix)) {
            auto w = as_matrix(fv.subspan(i * cin * cout, cin * cout), cin, cout);
            as_matrix(t.grad_of(ix), rows, cin).topRows(n).noalias() += g.bottomRows(n) * w.transpose();
          }
          if (t.needs_grad(iflt)) {
            auto gw = as_matrix(t.grad_of(iflt).subspan(i * cin * cout, cin * cout), cin, cout);
            gw.noalias() += xv.topRows(n).transpose() * g.bottomRows(n);
          }
        }
      });
}

Var weight_norm(const Var& v, const Var& g) {
  require_same_tape(v, g);
  const std::size_t cout = last_dim(v.shape());
  if (g.values().size() != cout) {
    throw std::invalid_argument("weight_norm gain " + shape_to_string(g.shape()) + " does not match filter " +
                                shape_to_string(v.shape()));
  }
  const auto vv = v.values();
  const auto gv = g.values();
  const std::size_t rows = vv.size() / cout;
  std::vector<double> norms(cout, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t o = 0; o < cout; ++o) norms[o] += vv[r * cout + o] * vv[r * cout + o];
  for (auto& n : norms) n = std::sqrt(n);
  std::vector<double> out(vv.size(), 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t o = 0; o < cout; ++o)
      if (norms[o] > 0) out[r * cout + o] = gv[o] * vv[r * cout + o] / norms[o];

  const std::size_t iv = v.node(), ig = g.node();
  Var inputs[] = {v, g};
  return v.tape().record(v.shape(), std::move(out), inputs, [iv, ig, rows, cout, norms](Tape& t, std::size_t self) {
    auto dw = t.grad_of(self);
    auto vv = t.value_of(iv);
    auto gv = t.value_of(ig);
    for (std::size_t o = 0; o < cout; ++o) {
      if (norms[o] == 0) continue;
      double proj = 0.0;  // u . dw with u = v / ||v||
      for (std::size_t r = 0; r < rows; ++r) proj += vv[r * cout + o] / norms[o] * dw[r * cout + o];
      if (t.needs_grad(ig)) t.grad_of(ig)[o] += proj;
      if (t.needs_grad(iv)) {
        auto gvv = t.grad_of(iv);
        const double s = gv[o] / norms[o];
        for (std::size_t r = 0; r < rows; ++r)
          gvv[r * cout + o] += s * (dw[r * cout + o] - vv[r * cout + o] / norms[o] * proj);
      }
    }
  });
}

Var sum(const Var& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  const std::size_t ix = x.node();
  Var inputs[] = {x};
  return x.tape().record({1}, {total}, inputs, [ix](Tape& t, std::size_t self) {
    const double g = t.grad_of(self)[0];
    for (auto& gx : t.grad_of(ix)) gx += g;
  });
}

Var mean(const Var& x) {
  const auto n = static_cast<double>(x.values().size());
  return scale(sum(x), 1.0 / n);
}

}  // namespace volbench
