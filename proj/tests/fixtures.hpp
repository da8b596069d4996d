#pragma once

// Small models and datasets shared by the training-level tests.

#include <cstdint>
#include <vector>

#include "beta/backbone.hpp"
#include "beta/episode.hpp"
#include "beta/rng.hpp"

namespace beta::testing {

inline BackboneConfig tiny_backbone_config() {
  BackboneConfig cfg;
  cfg.d_max = 8;
  cfg.d_token = 16;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.mlp_width = 32;
  return cfg;
}

/// A briefly pre-trained binary-task backbone, built once per test binary.
inline const BackboneWeights<float>& tiny_backbone() {
  static const BackboneWeights<float> weights = [] {
    PriorConfig prior;
    prior.d_hi = 8;
    prior.c_hi = 2;
    prior.n_support_lo = 16;
    prior.n_support_hi = 64;
    prior.n_query_lo = 16;
    prior.n_query_hi = 32;
    PretrainConfig train;
    train.steps = 300;
    train.lr = 3e-3;
    train.warmup = 20;
    train.seed = 1;
    return pretrain_backbone(tiny_backbone_config(), prior, train);
  }();
  return weights;
}

/// Gaussian classes whose means differ only on `informative` (a list of column indices).
inline LabeledSet gaussian_blobs(std::size_t n, std::size_t d, std::size_t classes,
                                 const std::vector<std::size_t>& informative, double separation,
                                 std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<std::vector<double>> means(classes, std::vector<double>(d, 0.0));
  for (auto& m : means)
    for (std::size_t j : informative) m[j] = separation * rng.normal();
  LabeledSet set{Tensor<float>({n, d}), std::vector<int>(n), classes};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % classes;
    set.y[i] = static_cast<int>(c);
    for (std::size_t j = 0; j < d; ++j) set.x.at(i, j) = static_cast<float>(means[c][j] + rng.normal());
  }
  return set;
}

}  // namespace beta::testing
