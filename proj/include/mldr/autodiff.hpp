#pragma once

#include "mldr/tensor.hpp"

#include <deque>
#include <functional>
#include <span>
#include <vector>

namespace mldr {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  double item() const { return value().item(); }
  bool needs_grad() const;

  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// What a backward rule sees: its inputs, its output, the incoming gradient,
/// and writable gradient buffers for the inputs that need one.
class BackwardContext {
 public:
  BackwardContext(Tape& tape, std::size_t self) : tape_(tape), self_(self) {}

  const Tensor& input(std::size_t k) const;
  const Tensor& output() const;
  std::span<const double> grad_out() const;
  bool wants(std::size_t k) const;
  /// Gradient accumulator for input k. Rules must add into it, never overwrite.
  std::span<double> grad_in(std::size_t k);

 private:
  Tape& tape_;
  std::size_t self_;
};

using BackwardFn = std::function<void(BackwardContext&)>;

/// Records one forward pass. Nodes are appended in evaluation order and
/// backward() walks them in exact reverse order. Single-threaded.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Records a reference to `t`. If t.requires_grad(), backward() adds
  /// d(loss)/dt into t.grad(). `t` must outlive the tape.
  Var leaf(Tensor& t);
  /// Records an owned value that never receives a gradient.
  Var constant(Tensor t);

  /// Appends an op result. The backward rule is dropped when no input needs a gradient.
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  /// Populates gradients of every requires_grad leaf reachable from `loss`.
  /// Leaf gradients accumulate across calls; call zero_grad on the leaves to reset.
  void backward(Var loss);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  friend class Var;
  friend class BackwardContext;

  struct Node {
    Tensor owned;
    Tensor* leaf = nullptr;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool needs_grad = false;
    Buffer grad;

    const Tensor& value() const { return leaf ? *leaf : owned; }
  };

  std::deque<Node> nodes_;
};

/// Copies the value onto the tape as a constant, cutting gradient flow.
Var detach(Var a);

// ---- elementwise (trailing-dimension broadcasting) ----
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double value);
Var neg(Var a);
Var exp(Var a);
/// Natural log with the input clamped to >= 1e-12.
Var log(Var a);
/// tanh-approximation GELU.
Var gelu(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator*(Var a, double s) { return scale(a, s); }
inline Var operator*(double s, Var a) { return scale(a, s); }
inline Var operator/(Var a, double s) { return scale(a, 1.0 / s); }
inline Var operator-(Var a) { return neg(a); }

// ---- shape ----
Var reshape(Var a, Shape shape);
Var permute(Var a, std::vector<std::size_t> axes);
/// Swaps the last two axes.
Var transpose(Var a);
/// Broadcasts `a` to `shape` (trailing alignment).
Var expand(Var a, Shape shape);
/// Stacks equally-shaped values along a new axis.
Var stack(std::span<const Var> parts, int axis);
/// Joins values along an existing axis; all other dims must match.
Var concat(std::span<const Var> parts, int axis);
/// Contiguous slice [start, start+length) along `axis`.
Var narrow(Var a, int axis, std::size_t start, std::size_t length);

// ---- reductions ----
Var sum(Var a);
Var sum(Var a, int axis, bool keepdim = false);
Var mean(Var a);
Var mean(Var a, int axis, bool keepdim = false);
/// Mean over the last two (spatial) axes: [B, C, H, W] -> [B, C].
Var global_avg_pool(Var a);

// ---- linear algebra ----
/// Batched product over the last two axes; leading axes broadcast.
Var matmul(Var a, Var b);
/// x[..., D_in] · W[D_in, D_out] + b[D_out].
Var linear(Var x, Var weight, Var bias);

// ---- normalization ----
/// Max-shifted softmax along `axis`.
Var softmax(Var a, int axis);
Var log_softmax(Var a, int axis);

}  // namespace mldr
