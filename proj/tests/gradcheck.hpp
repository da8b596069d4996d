#pragma once

// Central finite-difference oracle shared by the gradient tests. It only evaluates the
// forward graph; it never touches the tape's backward machinery.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "beta/autodiff.hpp"
#include "beta/rng.hpp"

namespace beta::testing {

using LossFn = std::function<Var<double>(Tape<double>&)>;

struct ProbeResult {
  double analytic = 0;
  double numeric = 0;
  double rel_error = 0;
};

inline double relative_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double evaluate(const LossFn& f) {
  Tape<double> tape(false);
  return f(tape).value().item();
}

/// Compare the tape gradient of `f` with central differences at `probes` random coordinates
/// spread over `params`.
inline std::vector<ProbeResult> check_gradients(const LossFn& f, std::vector<Parameter<double>*> params,
                                                std::size_t probes, std::uint64_t seed, double h = 1e-4) {
  Tape<double> tape;
  Var<double> loss = f(tape);
  Gradients<double> grads = tape.backward(loss);
  SplitMix64 rng(seed);
  std::vector<ProbeResult> out;
  std::size_t total = 0;
  for (const auto* p : params) total += p->value.size();
  for (std::size_t p = 0; p < probes; ++p) {
    // Coordinates are drawn uniformly over the concatenation of all parameters.
    std::size_t idx = rng.index(total), which = 0;
    while (idx >= params[which]->value.size()) idx -= params[which++]->value.size();
    Parameter<double>& param = *params[which];
    const Tensor<double>* g = grads.find(param);
    const double analytic = g ? (*g)[idx] : 0.0;
    const double saved = param.value[idx];
    param.value[idx] = saved + h;
    const double up = evaluate(f);
    param.value[idx] = saved - h;
    const double down = evaluate(f);
    param.value[idx] = saved;
    const double numeric = (up - down) / (2 * h);
    out.push_back({analytic, numeric, relative_error(analytic, numeric)});
  }
  return out;
}

inline double max_rel_error(const std::vector<ProbeResult>& results) {
  double worst = 0;
  for (const auto& r : results) worst = std::max(worst, r.rel_error);
  return worst;
}

inline Tensor<double> random_tensor(Shape shape, SplitMix64& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (double& v : t.values()) v = rng.normal() * scale;
  return t;
}

}  // namespace beta::testing
