#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "beta/tensor.hpp"

namespace beta {

/// A named, optionally trainable leaf. Gradients are keyed by the parameter's address, so a
/// parameter must not move while a tape that references it is alive.
template <class Real>
struct Parameter {
  std::string name;
  Tensor<Real> value;
  bool trainable = true;
};

template <class Real>
class Tape;

/// Handle to a node on a tape.
template <class Real>
struct Var {
  Tape<Real>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<Real>& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
};

/// Per-parameter adjoints produced by one backward pass, in first-use order.
template <class Real>
class Gradients {
 public:
  const Tensor<Real>* find(const Parameter<Real>& p) const;
  Tensor<Real>& get_or_zero(const Parameter<Real>& p);
  std::size_t size() const noexcept { return entries_.size(); }
  const std::vector<std::pair<const Parameter<Real>*, Tensor<Real>>>& entries() const noexcept {
    return entries_;
  }
  /// this += other, entry by entry.
  void accumulate(const Gradients& other);
  double squared_norm() const;
  void scale(Real factor);

 private:
  std::vector<std::pair<const Parameter<Real>*, Tensor<Real>>> entries_;
  std::unordered_map<const Parameter<Real>*, std::size_t> index_;
};

/// Reverse-mode tape. Nodes are appended in evaluation order; backward() walks them in exact
/// reverse. A tape built with `recording = false` computes values only.
template <class Real>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return recording_; }

  Var<Real> constant(Tensor<Real> value);
  /// Leaf bound to `p`. Repeated calls with the same parameter return the same node.
  Var<Real> parameter(const Parameter<Real>& p);

  /// Used by op implementations: append a node. `fn` is dropped when no input needs a gradient.
  Var<Real> record(Tensor<Real> value, std::initializer_list<Var<Real>> inputs, BackwardFn fn);

  const Tensor<Real>& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Adjoint buffer of a node, zero-allocated on first access.
  Tensor<Real>& grad(std::size_t id);
  std::size_t size() const noexcept { return nodes_.size(); }

  Gradients<Real> backward(Var<Real> loss);

 private:
  struct Node {
    Tensor<Real> owned;
    const Tensor<Real>* external = nullptr;
    Tensor<Real> grad;
    bool requires_grad = false;
    const Parameter<Real>* param = nullptr;
    BackwardFn backward;
  };

  bool recording_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<Real>*, std::size_t> param_nodes_;
};

template <class Real>
const Tensor<Real>& Var<Real>::value() const {
  return tape->value(id);
}
template <class Real>
bool Var<Real>::requires_grad() const {
  return tape->requires_grad(id);
}

/// Key for the counter-based dropout stream of one layer at one step.
struct DropoutKey {
  std::uint64_t seed = 0;
  std::uint64_t layer = 0;
  std::uint64_t step = 0;
  std::uint64_t stream() const noexcept;
};

// --- primitives -------------------------------------------------------------------------------
// Matrices are rank-2 row-major; "row vectors" are rank-1 of the trailing width.

template <class Real> Var<Real> matmul(Var<Real> a, Var<Real> b);
template <class Real> Var<Real> add(Var<Real> a, Var<Real> b);
template <class Real> Var<Real> sub(Var<Real> a, Var<Real> b);
template <class Real> Var<Real> mul(Var<Real> a, Var<Real> b);
template <class Real> Var<Real> scale(Var<Real> a, Real factor);
/// m + v broadcast over rows.
template <class Real> Var<Real> add_row(Var<Real> m, Var<Real> v);
/// m ⊙ v broadcast over rows.
template <class Real> Var<Real> mul_row(Var<Real> m, Var<Real> v);
template <class Real> Var<Real> relu(Var<Real> a);
/// Exact (erf) GELU.
template <class Real> Var<Real> gelu(Var<Real> a);
/// Inverted dropout. rate must lie in [0, 1); rate 0 returns `a` itself.
template <class Real> Var<Real> dropout(Var<Real> a, double rate, const DropoutKey& key);
template <class Real> Var<Real> layer_norm(Var<Real> x, Var<Real> gamma, Var<Real> beta, Real eps = Real(1e-5));
/// Softmax of a matrix along `axis` (0 = down columns, 1 = along rows).
template <class Real> Var<Real> softmax(Var<Real> a, int axis = 1);
template <class Real> Var<Real> sum(Var<Real> a);
template <class Real> Var<Real> mean(Var<Real> a);
template <class Real> Var<Real> slice_rows(Var<Real> a, std::size_t begin, std::size_t end);
template <class Real> Var<Real> concat_rows(Var<Real> a, Var<Real> b);
/// Row `k` of a matrix as a rank-1 tensor.
template <class Real> Var<Real> select_row(Var<Real> a, std::size_t k);
/// Mean negative log-likelihood of `labels` under softmax over the first `n_classes` columns of
/// `logits`; trailing columns are treated as -inf.
template <class Real>
Var<Real> cross_entropy(Var<Real> logits, std::span<const int> labels, std::size_t n_classes);
/// x: N×d, freq: d×F → N×(d·2F); feature j contributes [cos 2π f x_j (F), sin 2π f x_j (F)].
template <class Real> Var<Real> periodic_embedding(Var<Real> x, Var<Real> freq);
/// Multi-head self-attention under the in-context mask: rows [0, n_support) attend to support
/// rows only; every later row attends to the support rows plus itself.
template <class Real>
Var<Real> pfn_attention(Var<Real> q, Var<Real> k, Var<Real> v, std::size_t n_support, std::size_t n_heads);

}  // namespace beta
