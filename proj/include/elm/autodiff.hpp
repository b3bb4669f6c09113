#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "elm/tensor.hpp"

namespace elm {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  bool valid() const noexcept { return tape_ != nullptr; }
  Tape* tape() const noexcept { return tape_; }
  std::uint32_t id() const noexcept { return id_; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  double item() const { return value().item(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

/// Define-by-run computation tape for reverse-mode differentiation.
///
/// Operations append nodes in execution order, so the node list is already a
/// topological order and `backward` is a single reverse sweep. Parameters enter
/// through `param()`, which shares the parameter's storage instead of copying
/// it; `backward` accumulates into the parameter's own gradient buffer.
///
/// A tape built with `recording == false` only evaluates values. That is the
/// mode used for sampling and enumeration, where no gradient is needed.
///
/// Tapes are single-threaded. Separate tapes over the same frozen parameters
/// may run concurrently.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::uint32_t self)>;

  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return recording_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var constant(Tensor value);
  Var constant(double value) { return constant(Tensor::scalar(value)); }
  // Free variable whose gradient is readable through grad() after backward.
  Var variable(Tensor value);
  // Leaf bound to a parameter tensor. Repeated calls with the same tensor
  // return the same node.
  Var param(Tensor& parameter);

  const Tensor& value(Var v) const;
  // Gradient of the last backward's loss with respect to v. Empty when v did
  // not participate in the gradient.
  std::span<const double> grad(Var v) const;

  // Reverse sweep from a scalar loss. May be called once per tape.
  void backward(Var loss, double seed = 1.0);

  // --- interface for operation implementations ---
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward);
  bool needs_grad(std::uint32_t id) const noexcept { return nodes_[id].needs_grad; }
  std::span<double> grad_buffer(std::uint32_t id);
  const Tensor& value_of(std::uint32_t id) const;
  std::span<const std::uint32_t> inputs_of(std::uint32_t id) const { return nodes_[id].inputs; }

 private:
  struct Node {
    Tensor owned;
    Tensor* external = nullptr;
    std::vector<std::uint32_t> inputs;
    std::vector<double> grad;
    BackwardFn backward;
    bool needs_grad = false;
  };

  Var push(Node node);

  // deque keeps value references stable while operations append nodes
  std::deque<Node> nodes_;
  std::vector<std::pair<Tensor*, std::uint32_t>> param_nodes_;
  bool recording_;
  bool backward_done_ = false;
};

// ---------------------------------------------------------------------------
// Primitive operations. Each records one node and its vector-Jacobian product.
// Binary elementwise operations follow trailing-axis broadcasting.

Var matmul(Var a, Var b);
Var transpose(Var a);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);
Var neg(Var a);

Var exp(Var a);
Var log(Var a);
Var tanh(Var a);
// tanh approximation, as used by GPT-2 style blocks.
Var gelu(Var a);

// Reductions over the last axis.
Var softmax(Var a);
Var log_softmax(Var a);
Var logsumexp(Var a);

Var sum(Var a);
// Column sums of a rank-2 tensor: [m x n] -> [n].
Var sum_rows(Var a);

// Flat index select: out[i] = a.data[indices[i]]. Backward scatters.
Var gather(Var a, std::span<const std::size_t> indices);
// out[i] = a[i, cols[i]] for a rank-2 tensor.
Var pick(Var a, std::span<const std::size_t> cols);
// Embedding lookup: rows of a rank-2 table.
Var take_rows(Var table, std::span<const std::size_t> rows);
Var take_cols(Var a, std::span<const std::size_t> cols);
Var concat_cols(const std::vector<Var>& parts);
// Concatenates rank-0/rank-1 tensors into one vector.
Var concat(const std::vector<Var>& parts);

// Row-wise layer normalization with affine gain and bias over the last axis.
Var layer_norm(Var x, Var gain, Var bias, double eps);

}  // namespace elm
