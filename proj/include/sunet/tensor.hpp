#pragma once

// Dense float64 tensors with a reverse-mode tape.
//
// A Tensor is a handle: copies share storage, so closures recorded on a Tape
// can accumulate gradients into the tensors produced during the forward pass.

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sunet {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream oss;
  oss << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) oss << ',';
    oss << shape[i];
  }
  oss << ')';
  return oss.str();
}

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    for (auto extent : shape) {
      if (extent == 0) throw std::invalid_argument("tensor extent must be positive: " + shape_string(shape));
    }
    if (shape_size(shape) != values.size()) {
      throw std::invalid_argument("tensor shape " + shape_string(shape) + " does not match " +
                                  std::to_string(values.size()) + " values");
    }
    node_->shape = std::move(shape);
    node_->values = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    auto n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node().shape; }
  std::size_t rank() const { return node().shape.size(); }
  std::size_t dim(std::size_t axis) const { return node().shape.at(axis); }
  std::size_t size() const { return node().values.size(); }

  std::span<const double> values() const { return node().values; }
  // Parameter updates and in-place test perturbations only.
  std::span<double> mutable_values() { return node().values; }
  double operator[](std::size_t i) const { return node().values[i]; }

  double item() const {
    if (size() != 1) throw std::invalid_argument("item() on non-scalar tensor " + shape_string(shape()));
    return node().values[0];
  }

  bool requires_grad() const { return node().requires_grad; }
  void set_requires_grad(bool flag) { node().requires_grad = flag; }

  bool has_grad() const { return !node().grad.empty(); }
  std::span<const double> grad() const { return node().grad; }

  // Allocates a zeroed gradient buffer on first access. Const because a
  // Tensor is a handle; gradient accumulation is not a value mutation.
  std::vector<double>& grad_buffer() const {
    auto& n = node();
    if (n.grad.empty()) n.grad.assign(n.values.size(), 0.0);
    return n.grad;
  }

  void zero_grad() { node().grad.clear(); }

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  Tensor detached_copy() const { return Tensor(shape(), std::vector<double>(values().begin(), values().end())); }

 private:
  struct Node {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;
    bool requires_grad = false;
  };

  Node& node() const {
    if (!node_) throw std::logic_error("use of undefined tensor");
    return *node_;
  }

  std::shared_ptr<Node> node_;
};

// Ordered record of forward operations. Entries are appended in execution
// order, which is a topological order of the graph; backward replays them in
// reverse exactly once.
class Tape {
 public:
  struct Entry {
    std::string op;
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void()> backward;
  };

  void record(std::string op, std::vector<Tensor> inputs, Tensor output, std::function<void()> backward) {
    entries_.push_back({std::move(op), std::move(inputs), std::move(output), std::move(backward)});
  }

  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  void clear() { entries_.clear(); }

  void backward(Tensor loss) {
    if (loss.size() != 1) {
      throw std::invalid_argument("backward requires a scalar loss, got shape " + shape_string(loss.shape()));
    }
    loss.grad_buffer()[0] += 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (it->output.has_grad()) it->backward();
    }
  }

 private:
  std::vector<Entry> entries_;
};

namespace detail {

inline bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
  for (auto* t : ts) {
    if (t && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

inline bool recording(Tape* tape, std::initializer_list<const Tensor*> ts) {
  return tape != nullptr && any_requires_grad(ts);
}

inline void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* arg) {
  if (t.rank() != rank) {
    throw std::invalid_argument(std::string(op) + ": " + arg + " must have rank " + std::to_string(rank) +
                                ", got " + shape_string(t.shape()));
  }
}

}  // namespace detail

// Elementwise and reduction primitives used by losses and tests.

inline Tensor sum(Tape* tape, const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  Tensor out = Tensor::scalar(total, x.requires_grad());
  if (detail::recording(tape, {&x})) {
    tape->record("sum", {x}, out, [x, out]() {
      double g = out.grad()[0];
      auto& gx = x.grad_buffer();
      for (auto& v : gx) v += g;
    });
  }
  return out;
}

inline Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("mul: shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] * b[i];
  Tensor out(a.shape(), std::move(v), a.requires_grad() || b.requires_grad());
  if (detail::recording(tape, {&a, &b})) {
    tape->record("mul", {a, b}, out, [a, b, out]() {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
      }
    });
  }
  return out;
}

inline Tensor scale(Tape* tape, const Tensor& x, double factor) {
  std::vector<double> v(x.values().begin(), x.values().end());
  for (auto& e : v) e *= factor;
  Tensor out(x.shape(), std::move(v), x.requires_grad());
  if (detail::recording(tape, {&x})) {
    tape->record("scale", {x}, out, [x, out, factor]() {
      auto g = out.grad();
      auto& gx = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += factor * g[i];
    });
  }
  return out;
}

inline Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("add: shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] + b[i];
  Tensor out(a.shape(), std::move(v), a.requires_grad() || b.requires_grad());
  if (detail::recording(tape, {&a, &b})) {
    tape->record("add", {a, b}, out, [a, b, out]() {
      auto g = out.grad();
      for (const Tensor* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        auto& gt = t->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
      }
    });
  }
  return out;
}

}  // namespace sunet
