#pragma once

#include <cstddef>
#include <vector>

#include "beta/autodiff.hpp"

namespace beta {

struct AdamWConfig {
  double lr = 0.003;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moment accumulators aligned with a fixed parameter list.
template <class Real>
struct OptimizerState {
  std::vector<Tensor<Real>> first;
  std::vector<Tensor<Real>> second;
  std::size_t step = 0;
};

/// One AdamW update with bias-corrected moments and decoupled weight decay
/// (p ← p·(1 − lr·wd) − lr·m̂/(√v̂ + ε)). Parameters without a gradient entry see g = 0.
template <class Real>
void optimizer_step(OptimizerState<Real>& state, const std::vector<Parameter<Real>*>& params,
                    const Gradients<Real>& grads, const AdamWConfig& cfg);

/// Scale gradients so their global L2 norm is at most max_norm. Returns the pre-clip norm.
template <class Real>
double clip_grad_norm(Gradients<Real>& grads, double max_norm);

}  // namespace beta
