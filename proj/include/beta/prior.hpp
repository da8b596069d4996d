#pragma once

#include <cstdint>
#include <vector>

#include "beta/episode.hpp"

namespace beta {

/// Synthetic task distribution used to pre-train the backbone.
struct PriorConfig {
  std::size_t d_lo = 1, d_hi = 100;
  std::size_t c_lo = 2, c_hi = 10;
  std::size_t n_support_lo = 32, n_support_hi = 256;
  std::size_t n_query_lo = 32, n_query_hi = 128;
  double gaussian_weight = 0.5;  // mixing weights of the two families
  double mlp_weight = 0.5;
  double noise = 1.0;        // within-class std (gaussian) or logit noise (teacher)
  double separation = 2.0;   // scale of the random class means (gaussian)
  std::size_t max_informative = 10;
  std::size_t teacher_hidden = 16;
  bool standardize = true;   // support-statistics standardization, as applied downstream

  /// Throws std::invalid_argument for empty ranges, c_hi > 10 or d_hi > d_max.
  void validate(std::size_t d_max = 100) const;
};

/// Explicit class-conditional Gaussians with isotropic noise.
struct GaussianMixture {
  std::vector<std::vector<double>> means;  // C × d
  double sigma = 1.0;
};

Episode sample_episode(const PriorConfig& cfg, std::uint64_t seed);

/// Rows drawn with uniform class frequencies; support resampled until every class appears.
Episode sample_mixture_episode(const GaussianMixture& mixture, std::size_t n_support, std::size_t n_query,
                               std::uint64_t seed);

/// Standardize support and query columns with the support mean and population std.
void standardize_by_support(Episode& episode);

}  // namespace beta
