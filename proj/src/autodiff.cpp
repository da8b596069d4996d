#include "beta/autodiff.hpp"

#include <stdexcept>

#include "beta/rng.hpp"

namespace beta {

template <class Real>
const Tensor<Real>* Gradients<Real>::find(const Parameter<Real>& p) const {
  auto it = index_.find(&p);
  return it == index_.end() ? nullptr : &entries_[it->second].second;
}

template <class Real>
Tensor<Real>& Gradients<Real>::get_or_zero(const Parameter<Real>& p) {
  auto it = index_.find(&p);
  if (it != index_.end()) return entries_[it->second].second;
  index_.emplace(&p, entries_.size());
  entries_.emplace_back(&p, Tensor<Real>(p.value.shape()));
  return entries_.back().second;
}

template <class Real>
void Gradients<Real>::accumulate(const Gradients& other) {
  for (const auto& [param, g] : other.entries_) {
    Tensor<Real>& dst = get_or_zero(*param);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
  }
}

template <class Real>
double Gradients<Real>::squared_norm() const {
  double s = 0.0;
  for (const auto& entry : entries_) {
    for (Real v : entry.second.values()) s += static_cast<double>(v) * static_cast<double>(v);
  }
  return s;
}

template <class Real>
void Gradients<Real>::scale(Real factor) {
  for (auto& entry : entries_) {
    for (Real& v : entry.second.values()) v *= factor;
  }
}

std::uint64_t DropoutKey::stream() const noexcept { return derive_seed(derive_seed(seed, layer), step); }

template <class Real>
Var<Real> Tape<Real>::constant(Tensor<Real> value) {
  Node n;
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <class Real>
Var<Real> Tape<Real>::parameter(const Parameter<Real>& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return {this, it->second};
  Node n;
  n.external = &p.value;
  n.param = &p;
  n.requires_grad = recording_ && p.trainable;
  nodes_.push_back(std::move(n));
  param_nodes_.emplace(&p, nodes_.size() - 1);
  return {this, nodes_.size() - 1};
}

template <class Real>
Var<Real> Tape<Real>::record(Tensor<Real> value, std::initializer_list<Var<Real>> inputs, BackwardFn fn) {
  bool needs_grad = false;
  for (const Var<Real>& in : inputs) {
    if (in.tape != this) throw std::logic_error("tape: operand recorded on a different tape");
    needs_grad = needs_grad || nodes_[in.id].requires_grad;
  }
  Node n;
  n.owned = std::move(value);
  n.requires_grad = recording_ && needs_grad;
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <class Real>
const Tensor<Real>& Tape<Real>::value(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.external ? *n.external : n.owned;
}

template <class Real>
Tensor<Real>& Tape<Real>::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor<Real>(value(id).shape());
  return n.grad;
}

template <class Real>
Gradients<Real> Tape<Real>::backward(Var<Real> loss) {
  if (nodes_.empty()) throw std::logic_error("backward: tape is empty");
  if (loss.tape != this) throw std::logic_error("backward: loss belongs to a different tape");
  if (value(loss.id).size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + shape_to_string(value(loss.id).shape()));
  }
  Gradients<Real> out;
  if (!nodes_[loss.id].requires_grad) {
    for (const Node& n : nodes_) {
      if (n.param && n.requires_grad) out.get_or_zero(*n.param);
    }
    return out;
  }
  grad(loss.id)[0] = Real(1);
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.requires_grad && n.backward && !n.grad.empty()) n.backward(*this, id);
  }
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    Node& n = nodes_[id];
    if (!n.param || !n.requires_grad) continue;
    Tensor<Real>& g = out.get_or_zero(*n.param);
    if (!n.grad.empty()) g = n.grad;
  }
  return out;
}

template class Gradients<float>;
template class Gradients<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace beta
