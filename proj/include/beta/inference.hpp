#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "beta/backbone.hpp"
#include "beta/episode.hpp"
#include "beta/finetune.hpp"

namespace beta {

/// How support sets are chosen at prediction time.
struct ContextStrategy {
  enum class Kind { full, subsample, knn, bootstrap };
  Kind kind = Kind::bootstrap;
  std::size_t n_sub = 1000;     // subsample and bootstrap size, capped at N
  std::size_t k = 1000;         // neighbours for knn, capped at N
  std::size_t contexts = 16;    // bootstrap contexts for the plain backbone; BETA uses one per path
  std::uint64_t seed = 0;

  void validate() const;
  static ContextStrategy full();
  static ContextStrategy subsample(std::size_t n_sub, std::uint64_t seed = 0);
  static ContextStrategy knn(std::size_t k);
  static ContextStrategy bootstrap(std::size_t n_sub, std::size_t contexts = 16, std::uint64_t seed = 0);
};

const char* strategy_name(ContextStrategy::Kind kind);
ContextStrategy::Kind parse_strategy(const std::string& name);

struct AggregationRule {
  enum class Mode { uniform, weighted };
  Mode mode = Mode::uniform;
  /// Explicit path weights for weighted mode; when empty they are derived from confidence.
  std::vector<double> weights;
};

/// N_sub indices drawn uniformly with replacement: the first N_sub draws of the reference
/// generator seeded with `seed`, reduced modulo N.
std::vector<std::size_t> bootstrap_sample(std::size_t n, std::size_t n_sub, std::uint64_t seed);

/// min(N_sub, N) distinct indices, the prefix of a seeded permutation; all rows in order when N_sub >= N.
std::vector<std::size_t> subsample_indices(std::size_t n, std::size_t n_sub, std::uint64_t seed);

/// The min(k, N) rows of `train_x` nearest to `query` in Euclidean distance, nearest first;
/// equal distances go to the lower row index.
std::vector<std::size_t> knn_context(const Tensor<float>& train_x, std::span<const float> query, std::size_t k);

/// Mean Shannon entropy (nats) of the rows of a probability matrix.
double mean_entropy(const Tensor<double>& probs);

/// w_k ∝ exp(-H_k), H_k the mean prediction entropy of path k.
std::vector<double> confidence_weights(const std::vector<Tensor<double>>& path_probs);

/// Convex combination of per-path probability matrices, summed in path order.
Tensor<double> aggregate(const std::vector<Tensor<double>>& path_probs, const AggregationRule& rule);

/// Row-wise argmax, lowest index on ties.
std::vector<std::size_t> argmax_rows(const Tensor<double>& probs);

/// BETA prediction. Path k gets its own support (bootstrap seed = strategy.seed XOR k) or a
/// shared one (full / subsample), encodes support and queries with E^(k), and runs one
/// backbone forward per path for the whole query batch. Under ECOC, path l yields bit l and
/// the rule is not used. knn builds a separate support per query.
Tensor<double> bagged_predict(const BetaModel& model, const BackboneWeights<float>& theta, const LabeledSet& train,
                              const Tensor<float>& query_x, const ContextStrategy& strategy,
                              const AggregationRule& rule = {}, std::size_t workers = 1);

/// Frozen backbone on raw (zero-padded) features. Bootstrap draws strategy.contexts supports,
/// seeded strategy.seed XOR c. More classes than the head supports are handled by ECOC over
/// the frozen backbone with `code_length` bits, one forward per bit and context.
Tensor<double> pfn_predict(const BackboneWeights<float>& theta, const LabeledSet& train, const Tensor<float>& query_x,
                           const ContextStrategy& strategy, const AggregationRule& rule = {}, std::size_t workers = 1,
                           std::size_t code_length = 32);

/// Mean of `rounds` predictions under column permutations of the real (unpadded) features,
/// applied identically to support and query. Round 1 is the identity.
Tensor<double> feature_shuffle_ensemble(const Episode& episode, const BackboneWeights<float>& theta,
                                        std::size_t rounds, std::uint64_t seed, std::size_t workers = 1);

/// One line per query: C probability columns then the argmax label, with a header row.
void write_predictions(std::ostream& out, const Tensor<double>& probs, char separator = '\t');

}  // namespace beta
