#include "beta/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace beta {

template <class Real>
void optimizer_step(OptimizerState<Real>& state, const std::vector<Parameter<Real>*>& params,
                    const Gradients<Real>& grads, const AdamWConfig& cfg) {
  if (state.first.empty()) {
    for (const Parameter<Real>* p : params) {
      state.first.emplace_back(p->value.shape());
      state.second.emplace_back(p->value.shape());
    }
  }
  if (state.first.size() != params.size()) throw std::invalid_argument("optimizer: parameter list changed");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  const Real decay = static_cast<Real>(1.0 - cfg.lr * cfg.weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<Real>& p = *params[i];
    if (!p.trainable) continue;
    Tensor<Real>& m = state.first[i];
    Tensor<Real>& v = state.second[i];
    if (m.shape() != p.value.shape()) throw ShapeError("optimizer", m.shape(), p.value.shape());
    const Tensor<Real>* g = grads.find(p);
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double gj = g ? static_cast<double>((*g)[j]) : 0.0;
      const double mj = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
      const double vj = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
      m[j] = static_cast<Real>(mj);
      v[j] = static_cast<Real>(vj);
      const double update = (mj / bc1) / (std::sqrt(vj / bc2) + cfg.eps);
      p.value[j] = static_cast<Real>(p.value[j] * decay - cfg.lr * update);
    }
  }
}

template <class Real>
double clip_grad_norm(Gradients<Real>& grads, double max_norm) {
  const double norm = std::sqrt(grads.squared_norm());
  if (max_norm > 0 && norm > max_norm) grads.scale(static_cast<Real>(max_norm / norm));
  return norm;
}

template void optimizer_step<float>(OptimizerState<float>&, const std::vector<Parameter<float>*>&,
                                    const Gradients<float>&, const AdamWConfig&);
template void optimizer_step<double>(OptimizerState<double>&, const std::vector<Parameter<double>*>&,
                                     const Gradients<double>&, const AdamWConfig&);
template double clip_grad_norm<float>(Gradients<float>&, double);
template double clip_grad_norm<double>(Gradients<double>&, double);

}  // namespace beta
