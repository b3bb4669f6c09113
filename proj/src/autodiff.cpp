#include "elm/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "elm/error.hpp"

namespace elm {

const Tensor& Var::value() const {
  if (!tape_) throw ContractError("use of an unbound Var");
  return tape_->value(*this);
}

// ---------------------------------------------------------------------------
// Tape

Var Tape::push(Node node) {
  if (nodes_.size() >= std::numeric_limits<std::uint32_t>::max()) {
    throw ContractError("tape overflow");
  }
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::constant(Tensor value) {
  Node node;
  node.owned = std::move(value);
  return push(std::move(node));
}

Var Tape::variable(Tensor value) {
  Node node;
  node.owned = std::move(value);
  node.needs_grad = recording_;
  return push(std::move(node));
}

Var Tape::param(Tensor& parameter) {
  for (const auto& [ptr, id] : param_nodes_) {
    if (ptr == &parameter) return Var(this, id);
  }
  Node node;
  node.owned = Tensor::scalar(0.0);
  node.external = &parameter;
  node.needs_grad = recording_ && parameter.requires_grad();
  Var v = push(std::move(node));
  param_nodes_.emplace_back(&parameter, v.id());
  return v;
}

const Tensor& Tape::value(Var v) const {
  if (v.tape() != this) throw ContractError("Var belongs to a different tape");
  return value_of(v.id());
}

const Tensor& Tape::value_of(std::uint32_t id) const {
  const Node& node = nodes_[id];
  return node.external ? *node.external : node.owned;
}

std::span<const double> Tape::grad(Var v) const {
  if (v.tape() != this) throw ContractError("Var belongs to a different tape");
  return nodes_[v.id()].grad;
}

std::span<double> Tape::grad_buffer(std::uint32_t id) {
  Node& node = nodes_[id];
  if (node.grad.empty()) node.grad.assign(value_of(id).size(), 0.0);
  return node.grad;
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(std::move(value), std::vector<Var>(inputs), std::move(backward));
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward) {
  Node node;
  node.owned = std::move(value);
  if (recording_) {
    node.inputs.reserve(inputs.size());
    for (const Var& in : inputs) {
      if (in.tape() != this) throw ContractError("operands recorded on different tapes");
      node.inputs.push_back(in.id());
      node.needs_grad = node.needs_grad || nodes_[in.id()].needs_grad;
    }
    if (node.needs_grad) node.backward = std::move(backward);
  }
  return push(std::move(node));
}

void Tape::backward(Var loss, double seed) {
  if (loss.tape() != this) throw ContractError("loss belongs to a different tape");
  if (!recording_) throw ContractError("backward on a non-recording tape");
  if (backward_done_) throw ContractError("backward already ran on this tape");
  if (value_of(loss.id()).size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        shape_string(value_of(loss.id()).shape()));
  }
  backward_done_ = true;
  if (!nodes_[loss.id()].needs_grad) return;
  grad_buffer(loss.id())[0] += seed;
  for (std::uint32_t id = loss.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.needs_grad || node.grad.empty() || !node.backward) continue;
    node.backward(*this, id);
  }
  for (const auto& [param, id] : param_nodes_) {
    const Node& node = nodes_[id];
    if (!node.needs_grad || node.grad.empty()) continue;
    auto dst = param->ensure_grad();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += node.grad[i];
  }
}

// ---------------------------------------------------------------------------
// Helpers

namespace {

Tape& tape_of(Var a) {
  if (!a.valid()) throw ContractError("operation on an unbound Var");
  return *a.tape();
}

Tape& tape_of(Var a, Var b) {
  Tape& t = tape_of(a);
  if (b.tape() != &t) throw ContractError("operands recorded on different tapes");
  return t;
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + " expects a rank-2 tensor, got " + shape_string(t.shape()));
  }
}

// Maps each output element of a broadcast binary operation to its source
// element in one operand.
struct BroadcastIndex {
  enum class Mode { Identity, Modulo, Map } mode = Mode::Identity;
  std::size_t modulus = 1;
  std::vector<std::size_t> map;

  std::size_t operator()(std::size_t i) const {
    switch (mode) {
      case Mode::Identity: return i;
      case Mode::Modulo: return i % modulus;
      case Mode::Map: return map[i];
    }
    return i;
  }
};

struct BroadcastPlan {
  Shape out;
  BroadcastIndex a, b;
};

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

BroadcastIndex general_index(const Shape& in, const Shape& out) {
  BroadcastIndex idx;
  idx.mode = BroadcastIndex::Mode::Map;
  const std::size_t n = shape_size(out);
  const std::size_t rank = out.size();
  const std::size_t offset = rank - in.size();
  std::vector<std::size_t> in_strides(rank, 0);
  std::size_t stride = 1;
  for (std::size_t k = in.size(); k-- > 0;) {
    in_strides[k + offset] = in[k] == 1 ? 0 : stride;
    stride *= in[k];
  }
  idx.map.resize(n);
  std::vector<std::size_t> counter(rank, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t src = 0;
    for (std::size_t k = 0; k < rank; ++k) src += counter[k] * in_strides[k];
    idx.map[i] = src;
    for (std::size_t k = rank; k-- > 0;) {
      if (++counter[k] < out[k]) break;
      counter[k] = 0;
    }
  }
  return idx;
}

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
  BroadcastPlan plan;
  if (a == b) {
    plan.out = a;
    return plan;
  }
  const std::size_t rank = std::max(a.size(), b.size());
  plan.out.assign(rank, 1);
  for (std::size_t k = 0; k < rank; ++k) {
    const std::size_t ea = k + a.size() >= rank ? a[k + a.size() - rank] : 1;
    const std::size_t eb = k + b.size() >= rank ? b[k + b.size() - rank] : 1;
    if (ea != eb && ea != 1 && eb != 1) {
      throw DimensionError("shapes " + shape_string(a) + " and " + shape_string(b) +
                           " are not broadcast-compatible");
    }
    plan.out[k] = std::max(ea, eb);
  }
  auto make = [&](const Shape& in) {
    BroadcastIndex idx;
    if (in == plan.out) return idx;
    if (is_suffix(in, plan.out)) {
      idx.mode = BroadcastIndex::Mode::Modulo;
      idx.modulus = shape_size(in);
      return idx;
    }
    return general_index(in, plan.out);
  };
  plan.a = make(a);
  plan.b = make(b);
  return plan;
}

template <typename Forward, typename Backward>
Var binary(Var a, Var b, Forward forward, Backward partials) {
  Tape& tape = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(av.shape(), bv.shape()));
  Tensor out(plan->out);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = forward(av[plan->a(i)], bv[plan->b(i)]);
  return tape.record(std::move(out), {a, b}, [plan, partials](Tape& t, std::uint32_t self) {
    const auto in = t.inputs_of(self);
    const std::uint32_t ia = in[0], ib = in[1];
    const Tensor& x = t.value_of(ia);
    const Tensor& y = t.value_of(ib);
    auto g = t.grad_buffer(self);
    const bool need_a = t.needs_grad(ia), need_b = t.needs_grad(ib);
    std::span<double> ga, gb;
    if (need_a) ga = t.grad_buffer(ia);
    if (need_b) gb = t.grad_buffer(ib);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const std::size_t ja = plan->a(i), jb = plan->b(i);
      const auto [da, db] = partials(x[ja], y[jb]);
      if (need_a) ga[ja] += g[i] * da;
      if (need_b) gb[jb] += g[i] * db;
    }
  });
}

template <typename Forward, typename Derivative>
Var unary(Var a, Forward forward, Derivative derivative) {
  Tape& tape = tape_of(a);
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = forward(av[i]);
  return tape.record(std::move(out), {a}, [derivative](Tape& t, std::uint32_t self) {
    const std::uint32_t ia = t.inputs_of(self)[0];
    const Tensor& x = t.value_of(ia);
    const Tensor& y = t.value_of(self);
    auto g = t.grad_buffer(self);
    auto ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * derivative(x[i], y[i]);
  });
}

Shape drop_last_axis(const Shape& s) {
  if (s.empty()) return s;
  return Shape(s.begin(), s.end() - 1);
}

}  // namespace

// ---------------------------------------------------------------------------
// Linear algebra

Var matmul(Var a, Var b) {
  Tape& tape = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank2(av, "matmul");
  require_rank2(bv, "matmul");
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  if (bv.dim(0) != k) {
    throw DimensionError("matmul inner extents differ: " + shape_string(av.shape()) + " x " +
                         shape_string(bv.shape()));
  }
  Tensor out({m, n});
  const double* A = av.data().data();
  const double* B = bv.data().data();
  double* C = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = C + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  return tape.record(std::move(out), {a, b}, [m, k, n](Tape& t, std::uint32_t self) {
    const auto in = t.inputs_of(self);
    const double* A = t.value_of(in[0]).data().data();
    const double* B = t.value_of(in[1]).data().data();
    const double* G = t.grad_buffer(self).data();
    if (t.needs_grad(in[0])) {
      double* GA = t.grad_buffer(in[0]).data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = G + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = B + p * n;
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          GA[i * k + p] += acc;
        }
      }
    }
    if (t.needs_grad(in[1])) {
      double* GB = t.grad_buffer(in[1]).data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = G + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A[i * k + p];
          if (aip == 0.0) continue;
          double* gbrow = GB + p * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
        }
      }
    }
  });
}

Var transpose(Var a) {
  Tape& tape = tape_of(a);
  const Tensor& av = a.value();
  require_rank2(av, "transpose");
  const std::size_t m = av.dim(0), n = av.dim(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  return tape.record(std::move(out), {a}, [m, n](Tape& t, std::uint32_t self) {
    const std::uint32_t ia = t.inputs_of(self)[0];
    auto g = t.grad_buffer(self);
    auto ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
  });
}

// ---------------------------------------------------------------------------
// Elementwise

Var add(Var a, Var b) {
  return binary(a, b, [](double x, double y) { return x + y; },
                [](double, double) { return std::pair{1.0, 1.0}; });
}

Var sub(Var a, Var b) {
  return binary(a, b, [](double x, double y) { return x - y; },
                [](double, double) { return std::pair{1.0, -1.0}; });
}

Var mul(Var a, Var b) {
  return binary(a, b, [](double x, double y) { return x * y; },
                [](double x, double y) { return std::pair{y, x}; });
}

Var scale(Var a, double factor) {
  return unary(a, [factor](double x) { return factor * x; },
               [factor](double, double) { return factor; });
}

Var add_scalar(Var a, double offset) {
  return unary(a, [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

Var neg(Var a) { return scale(a, -1.0); }

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  for (double x : a.value().data()) {
    if (!(x > 0.0)) throw DomainError("log of non-positive value " + std::to_string(x));
  }
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Var gelu(Var a) {
  static constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  static constexpr double kA = 0.044715;
  return unary(
      a,
      [](double x) { return 0.5 * x * (1.0 + std::tanh(kC * (x + kA * x * x * x))); },
      [](double x, double) {
        const double u = kC * (x + kA * x * x * x);
        const double th = std::tanh(u);
        const double du = kC * (1.0 + 3.0 * kA * x * x);
        return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
      });
}

// ---------------------------------------------------------------------------
// Last-axis reductions

Var softmax(Var a) {
  Tape& tape = tape_of(a);
  const Tensor& av = a.value();
  const std::size_t n = av.cols(), rows = av.size() / n;
  Tensor out(av.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data().data() + r * n;
    double* y = out.data().data() + r * n;
    const double mx = *std::max_element(x, x + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < n; ++j) y[j] /= z;
  }
  return tape.record(std::move(out), {a}, [n, rows](Tape& t, std::uint32_t self) {
    const std::uint32_t ia = t.inputs_of(self)[0];
    const Tensor& y = t.value_of(self);
    auto g = t.grad_buffer(self);
    auto ga = t.grad_buffer(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
      for (std::size_t j = 0; j < n; ++j) ga[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
    }
  });
}

Var log_softmax(Var a) {
  Tape& tape = tape_of(a);
  const Tensor& av = a.value();
  const std::size_t n = av.cols(), rows = av.size() / n;
  Tensor out(av.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data().data() + r * n;
    double* y = out.data().data() + r * n;
    const double mx = *std::max_element(x, x + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(x[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) y[j] = x[j] - lse;
  }
  return tape.record(std::move(out), {a}, [n, rows](Tape& t, std::uint32_t self) {
    const std::uint32_t ia = t.inputs_of(self)[0];
    const Tensor& y = t.value_of(self);
    auto g = t.grad_buffer(self);
    auto ga = t.grad_buffer(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      double gsum = 0.0;
      for (std::size_t j = 0; j < n; ++j) gsum += g[r * n + j];
      for (std::size_t j = 0; j < n; ++j) ga[r * n + j] += g[r * n + j] - std::exp(y[r * n + j]) * gsum;
    }
  });
}

Var logsumexp(Var a) {
  Tape& tape = tape_of(a);
  const Tensor& av = a.value();
  const std::size_t n = av.cols(), rows = av.size() / n;
  Shape out_shape = drop_last_axis(av.shape());
  Tensor out(out_shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data().data() + r * n;
    const double mx = *std::max_element(x, x + n);
    if (std::isinf(mx)) {
      out[r] = mx;
      continue;
    }
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(x[j] - mx);
    out[r] = mx + std::log(z);
  }
  return tape.record(std::move(out), {a}, [n, rows](Tape& t, std::uint32_t self) {
    const std::uint32_t ia = t.inputs_of(self)[0];
    const Tensor& x = t.value_of(ia);
    const Tensor& y = t.value_of(self);
    auto g = t.grad_buffer(self);
    auto ga = t.grad_buffer(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      if (std::isinf(y[r])) continue;
      for (std::size_t j = 0; j < n; ++j) ga[r * n + j] += g[r] * std::exp(x[r * n + j] - y[r]);
    }
  });
}

Var sum(Var a) {
  Tape& tape = tape_of(a);
  double total = 0.0;
  for (double x : a.value().data()) total += x;
  return tape.record(Tensor::scalar(total), {a}, [](Tape& t, std::uint32_t self) {
    const std::uint32_t ia = t.inputs_of(self)[0];
    const double g = t.grad_buffer(self)[0];
    for (double& x : t.grad_buffer(ia)) x += g;
  });
}

Var sum_rows(Var a) {
  Tape& tape = tape_of(a);
  const Tensor& av = a.value();
  require_rank2(av, "sum_rows");
  const std::size_t m = av.dim(0), n = av.dim(1);
  Tensor out({n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += av[i * n + j];
  return tape.record(std::move(out), {a}, [m, n](Tape& t, std::uint32_t self) {
    const std::uint32_t ia = t.inputs_of(self)[0];
    auto g = t.grad_buffer(self);
    auto ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j];
  });
}

// ---------------------------------------------------------------------------
// Indexing

Var gather(Var a, std::span<const std::size_t> indices) {
  Tape& tape = tape_of(a);
  const Tensor& av = a.value();
  if (indices.empty()) throw ContractError("gather with no indices");
  Tensor out({indices.size()});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= av.size()) {
      throw IndexError("gather index " + std::to_string(indices[i]) + " out of range for " +
                       shape_string(av.shape()));
    }
    out[i] = av[indices[i]];
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return tape.record(std::move(out), {a}, [idx = std::move(idx)](Tape& t, std::uint32_t self) {
    const std::uint32_t ia = t.inputs_of(self)[0];
    auto g = t.grad_buffer(self);
    auto ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < idx.size(); ++i) ga[idx[i]] += g[i];
  });
}

Var pick(Var a, std::span<const std::size_t> cols) {
  const Tensor& av = a.value();
  require_rank2(av, "pick");
  if (cols.size() != av.dim(0)) {
    throw DimensionError("pick needs one column per row: " + std::to_string(cols.size()) + " vs " +
                         shape_string(av.shape()));
  }
  const std::size_t n = av.dim(1);
  std::vector<std::size_t> flat(cols.size());
  for (std::size_t i = 0; i < cols.size(); ++i) {
    if (cols[i] >= n) {
      throw IndexError("pick column " + std::to_string(cols[i]) + " out of range for " +
                       shape_string(av.shape()));
    }
    flat[i] = i * n + cols[i];
  }
  return gather(a, flat);
}

Var take_rows(Var table, std::span<const std::size_t> rows) {
  Tape& tape = tape_of(table);
  const Tensor& tv = table.value();
  require_rank2(tv, "take_rows");
  if (rows.empty()) throw ContractError("take_rows with no rows");
  const std::size_t n = tv.dim(1), R = tv.dim(0);
  Tensor out({rows.size(), n});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= R) {
      throw IndexError("row " + std::to_string(rows[i]) + " out of range for " + shape_string(tv.shape()));
    }
    std::copy_n(tv.data().data() + rows[i] * n, n, out.data().data() + i * n);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return tape.record(std::move(out), {table}, [idx = std::move(idx), n](Tape& t, std::uint32_t self) {
    const std::uint32_t ia = t.inputs_of(self)[0];
    auto g = t.grad_buffer(self);
    auto ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < n; ++j) ga[idx[i] * n + j] += g[i * n + j];
  });
}

Var take_cols(Var a, std::span<const std::size_t> cols) {
  Tape& tape = tape_of(a);
  const Tensor& av = a.value();
  require_rank2(av, "take_cols");
  if (cols.empty()) throw ContractError("take_cols with no columns");
  const std::size_t m = av.dim(0), n = av.dim(1), k = cols.size();
  for (std::size_t c : cols) {
    if (c >= n) throw IndexError("column " + std::to_string(c) + " out of range for " + shape_string(av.shape()));
  }
  Tensor out({m, k});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] = av[i * n + cols[j]];
  std::vector<std::size_t> idx(cols.begin(), cols.end());
  return tape.record(std::move(out), {a}, [idx = std::move(idx), m, n](Tape& t, std::uint32_t self) {
    const std::uint32_t ia = t.inputs_of(self)[0];
    const std::size_t k = idx.size();
    auto g = t.grad_buffer(self);
    auto ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < k; ++j) ga[i * n + idx[j]] += g[i * k + j];
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat_cols of nothing");
  Tape& tape = tape_of(parts.front());
  const std::size_t m = parts.front().value().dim(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    require_rank2(v, "concat_cols");
    if (v.dim(0) != m) throw DimensionError("concat_cols row counts differ");
    widths.push_back(v.dim(1));
    total += v.dim(1);
  }
  Tensor out({m, total});
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& v = parts[p].value();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(v.data().data() + i * widths[p], widths[p], out.data().data() + i * total + offset);
    offset += widths[p];
  }
  return tape.record(std::move(out), parts, [widths, m, total](Tape& t, std::uint32_t self) {
    const auto in = t.inputs_of(self);
    auto g = t.grad_buffer(self);
    std::size_t offset = 0;
    for (std::size_t p = 0; p < in.size(); ++p) {
      if (t.needs_grad(in[p])) {
        auto gp = t.grad_buffer(in[p]);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < widths[p]; ++j) gp[i * widths[p] + j] += g[i * total + offset + j];
      }
      offset += widths[p];
    }
  });
}

Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat of nothing");
  Tape& tape = tape_of(parts.front());
  std::vector<double> values;
  std::vector<std::size_t> sizes;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    if (v.rank() > 1) throw DimensionError("concat expects rank-0 or rank-1 parts");
    values.insert(values.end(), v.data().begin(), v.data().end());
    sizes.push_back(v.size());
  }
  const std::size_t n = values.size();
  return tape.record(Tensor({n}, std::move(values)), parts, [sizes](Tape& t, std::uint32_t self) {
    const auto in = t.inputs_of(self);
    auto g = t.grad_buffer(self);
    std::size_t offset = 0;
    for (std::size_t p = 0; p < in.size(); ++p) {
      if (t.needs_grad(in[p])) {
        auto gp = t.grad_buffer(in[p]);
        for (std::size_t j = 0; j < sizes[p]; ++j) gp[j] += g[offset + j];
      }
      offset += sizes[p];
    }
  });
}

// ---------------------------------------------------------------------------
// Normalization

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Tape& tape = tape_of(x);
  const Tensor& xv = x.value();
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  const std::size_t n = xv.cols(), rows = xv.size() / n;
  if (gv.size() != n || bv.size() != n) {
    throw DimensionError("layer_norm affine parameters must have " + std::to_string(n) + " entries");
  }
  Tensor out(xv.shape());
  auto stats = std::make_shared<std::vector<double>>(2 * rows);  // mean, inv_std per row
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data().data() + r * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += xr[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*stats)[2 * r] = mean;
    (*stats)[2 * r + 1] = inv;
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = (xr[j] - mean) * inv * gv[j] + bv[j];
  }
  return tape.record(std::move(out), {x, gain, bias}, [stats, n, rows](Tape& t, std::uint32_t self) {
    const auto in = t.inputs_of(self);
    const Tensor& xv = t.value_of(in[0]);
    const Tensor& gv = t.value_of(in[1]);
    auto g = t.grad_buffer(self);
    const bool need_x = t.needs_grad(in[0]), need_g = t.needs_grad(in[1]), need_b = t.needs_grad(in[2]);
    std::span<double> gx, gg, gb;
    if (need_x) gx = t.grad_buffer(in[0]);
    if (need_g) gg = t.grad_buffer(in[1]);
    if (need_b) gb = t.grad_buffer(in[2]);
    std::vector<double> xhat(n), dxhat(n);
    for (std::size_t r = 0; r < rows; ++r) {
      const double mean = (*stats)[2 * r], inv = (*stats)[2 * r + 1];
      double s1 = 0.0, s2 = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        xhat[j] = (xv[r * n + j] - mean) * inv;
        const double gj = g[r * n + j];
        if (need_g) gg[j] += gj * xhat[j];
        if (need_b) gb[j] += gj;
        dxhat[j] = gj * gv[j];
        s1 += dxhat[j];
        s2 += dxhat[j] * xhat[j];
      }
      if (!need_x) continue;
      const double nn = static_cast<double>(n);
      for (std::size_t j = 0; j < n; ++j) {
        gx[r * n + j] += inv * (dxhat[j] - s1 / nn - xhat[j] * s2 / nn);
      }
    }
  });
}

}  // namespace elm
