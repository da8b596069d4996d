#include "beta/inference.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <optional>
#include <ostream>
#include <stdexcept>

#include "beta/ecoc.hpp"
#include "beta/parallel.hpp"
#include "beta/rng.hpp"

namespace beta {
namespace {

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

Tensor<float> query_row(const Tensor<float>& x, std::size_t i) {
  const std::size_t d = x.shape()[1];
  return Tensor<float>({1, d}, std::vector<float>(x.data() + i * d, x.data() + (i + 1) * d));
}

/// Support rows for context c of a non-knn strategy.
std::vector<std::size_t> context_rows(const ContextStrategy& s, std::size_t n, std::size_t c) {
  switch (s.kind) {
    case ContextStrategy::Kind::full: return all_rows(n);
    case ContextStrategy::Kind::subsample: return subsample_indices(n, s.n_sub, s.seed);
    case ContextStrategy::Kind::bootstrap: return bootstrap_sample(n, std::min(s.n_sub, n), s.seed ^ c);
    case ContextStrategy::Kind::knn: break;
  }
  throw std::logic_error("context_rows: knn supports are built per query");
}

void check_inputs(const LabeledSet& train, const Tensor<float>& query_x) {
  train.validate();
  if (train.size() == 0) throw std::invalid_argument("predict: training set is empty");
  if (query_x.rank() != 2 || query_x.shape()[1] != train.width()) {
    throw ShapeError("predict: queries " + shape_to_string(query_x.shape()) + " do not match training width " +
                     std::to_string(train.width()));
  }
}

void copy_rows(const Tensor<double>& from, Tensor<double>& to, std::size_t row) {
  std::copy(from.values().begin(), from.values().end(), to.data() + row * to.shape()[1]);
}

/// Per-path probabilities (or bit probabilities under ECOC) for one BETA path and support.
Tensor<double> path_probabilities(const BetaModel& model, const BackboneWeights<float>& theta, std::size_t k,
                                  const LabeledSet& support, const Tensor<float>& query_x) {
  Tape<float> tape(false);
  auto logits = path_logits(tape, model, theta, k, tape.constant(support.x), support.y, tape.constant(query_x), false);
  return class_probabilities(logits.value(), model.path_classes());
}

/// Combine per-path outputs. Under ECOC each path holds the distribution of its own bit.
Tensor<double> combine_paths(const BetaModel& model, const std::vector<Tensor<double>>& per_path,
                             const AggregationRule& rule) {
  if (model.head != HeadMode::ecoc) return aggregate(per_path, rule);
  const std::size_t nq = per_path[0].shape()[0];
  Tensor<double> out({nq, model.n_classes});
  std::vector<double> bits(model.paths());
  for (std::size_t i = 0; i < nq; ++i) {
    for (std::size_t k = 0; k < model.paths(); ++k) bits[k] = per_path[k].at(i, 1);
    const auto p = ecoc_class_probabilities(*model.codebook, bits);
    std::copy(p.begin(), p.end(), out.data() + i * model.n_classes);
  }
  return out;
}

Tensor<double> bagged_batch(const BetaModel& model, const BackboneWeights<float>& theta, const LabeledSet& train,
                            const Tensor<float>& query_x, const ContextStrategy& strategy, const AggregationRule& rule,
                            std::size_t workers) {
  std::vector<Tensor<double>> per_path(model.paths());
  parallel_for(model.paths(), workers, [&](std::size_t k) {
    per_path[k] = path_probabilities(model, theta, k, train.subset(context_rows(strategy, train.size(), k)), query_x);
  });
  return combine_paths(model, per_path, rule);
}

/// Class or bit probabilities of the frozen backbone on one context.
Tensor<double> backbone_probabilities(const BackboneWeights<float>& theta, const LabeledSet& support,
                                      const Tensor<float>& query_x, const EcocCodebook* code, std::size_t bit) {
  Episode ep{support.x, support.y, query_x, {}, support.n_classes};
  if (code) {
    ep.support_y = ecoc_column_labels(*code, support.y, bit);
    ep.n_classes = 2;
  }
  return class_probabilities(pfn_forward(ep, theta), ep.n_classes);
}

/// Backbone prediction for a list of contexts, aggregated by `rule` (ECOC: bits averaged over
/// contexts, then decoded).
Tensor<double> backbone_contexts(const BackboneWeights<float>& theta, const std::vector<LabeledSet>& contexts,
                                 const Tensor<float>& query_x, const AggregationRule& rule, const EcocCodebook* code,
                                 std::size_t workers) {
  const std::size_t bits = code ? code->length : 1;
  std::vector<Tensor<double>> parts(contexts.size() * bits);
  parallel_for(parts.size(), workers, [&](std::size_t j) {
    parts[j] = backbone_probabilities(theta, contexts[j / bits], query_x, code, j % bits);
  });
  if (!code) return aggregate(parts, rule);
  const std::size_t nq = query_x.shape()[0], c = code->n_classes;
  std::vector<Tensor<double>> decoded(contexts.size());
  for (std::size_t ctx = 0; ctx < contexts.size(); ++ctx) {
    decoded[ctx] = Tensor<double>({nq, c});
    std::vector<double> p(bits);
    for (std::size_t i = 0; i < nq; ++i) {
      for (std::size_t l = 0; l < bits; ++l) p[l] = parts[ctx * bits + l].at(i, 1);
      const auto probs = ecoc_class_probabilities(*code, p);
      std::copy(probs.begin(), probs.end(), decoded[ctx].data() + i * c);
    }
  }
  return aggregate(decoded, rule);
}

}  // namespace

void ContextStrategy::validate() const {
  if (n_sub == 0) throw std::invalid_argument("context strategy: N_sub must be at least 1");
  if (k == 0) throw std::invalid_argument("context strategy: k must be at least 1");
  if (contexts == 0) throw std::invalid_argument("context strategy: at least one context is required");
}

ContextStrategy ContextStrategy::full() {
  ContextStrategy s;
  s.kind = Kind::full;
  s.contexts = 1;
  return s;
}

ContextStrategy ContextStrategy::subsample(std::size_t n_sub, std::uint64_t seed) {
  ContextStrategy s;
  s.kind = Kind::subsample;
  s.n_sub = n_sub;
  s.contexts = 1;
  s.seed = seed;
  return s;
}

ContextStrategy ContextStrategy::knn(std::size_t k) {
  ContextStrategy s;
  s.kind = Kind::knn;
  s.k = k;
  s.contexts = 1;
  return s;
}

ContextStrategy ContextStrategy::bootstrap(std::size_t n_sub, std::size_t contexts, std::uint64_t seed) {
  ContextStrategy s;
  s.kind = Kind::bootstrap;
  s.n_sub = n_sub;
  s.contexts = contexts;
  s.seed = seed;
  return s;
}

const char* strategy_name(ContextStrategy::Kind kind) {
  switch (kind) {
    case ContextStrategy::Kind::full: return "full";
    case ContextStrategy::Kind::subsample: return "subsample";
    case ContextStrategy::Kind::knn: return "knn";
    case ContextStrategy::Kind::bootstrap: return "bootstrap";
  }
  return "?";
}

ContextStrategy::Kind parse_strategy(const std::string& name) {
  if (name == "full") return ContextStrategy::Kind::full;
  if (name == "subsample") return ContextStrategy::Kind::subsample;
  if (name == "knn") return ContextStrategy::Kind::knn;
  if (name == "bootstrap") return ContextStrategy::Kind::bootstrap;
  throw std::invalid_argument("unknown context strategy '" + name + "' (expected full, subsample, knn or bootstrap)");
}

std::vector<std::size_t> bootstrap_sample(std::size_t n, std::size_t n_sub, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("bootstrap_sample: training set is empty");
  SplitMix64 rng(seed);
  std::vector<std::size_t> idx(n_sub);
  for (auto& i : idx) i = rng.index(n);
  return idx;
}

std::vector<std::size_t> subsample_indices(std::size_t n, std::size_t n_sub, std::uint64_t seed) {
  if (n_sub >= n) return all_rows(n);
  SplitMix64 rng(seed);
  auto order = permutation(n, rng);
  order.resize(n_sub);
  return order;
}

std::vector<std::size_t> knn_context(const Tensor<float>& train_x, std::span<const float> query, std::size_t k) {
  if (train_x.rank() != 2 || train_x.shape()[1] != query.size()) {
    throw ShapeError("knn_context: query of width " + std::to_string(query.size()) + " against rows " +
                     shape_to_string(train_x.shape()));
  }
  const std::size_t n = train_x.shape()[0];
  std::vector<double> dist(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    auto row = train_x.row(i);
    for (std::size_t j = 0; j < query.size(); ++j) {
      const double diff = static_cast<double>(row[j]) - query[j];
      s += diff * diff;
    }
    dist[i] = s;
  }
  auto order = all_rows(n);
  const std::size_t keep = std::min(k, n);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                    [&](std::size_t a, std::size_t b) { return dist[a] < dist[b] || (dist[a] == dist[b] && a < b); });
  order.resize(keep);
  return order;
}

double mean_entropy(const Tensor<double>& probs) {
  const std::size_t n = probs.shape()[0];
  double total = 0;
  for (double p : probs.values())
    if (p > 0) total -= p * std::log(p);
  return n ? total / static_cast<double>(n) : 0.0;
}

std::vector<double> confidence_weights(const std::vector<Tensor<double>>& path_probs) {
  std::vector<double> h(path_probs.size());
  for (std::size_t k = 0; k < h.size(); ++k) h[k] = mean_entropy(path_probs[k]);
  // Shift by the smallest entropy so the largest weight is exp(0).
  const double lo = *std::min_element(h.begin(), h.end());
  std::vector<double> w(h.size());
  double z = 0;
  for (std::size_t k = 0; k < h.size(); ++k) z += w[k] = std::exp(-(h[k] - lo));
  for (double& v : w) v /= z;
  return w;
}

Tensor<double> aggregate(const std::vector<Tensor<double>>& path_probs, const AggregationRule& rule) {
  if (path_probs.empty()) throw std::invalid_argument("aggregate: no path predictions");
  const Shape& shape = path_probs[0].shape();
  for (const auto& p : path_probs) {
    if (p.shape() != shape) throw ShapeError("aggregate", shape, p.shape());
  }
  std::vector<double> w;
  if (rule.mode == AggregationRule::Mode::uniform) {
    w.assign(path_probs.size(), 1.0 / static_cast<double>(path_probs.size()));
  } else if (!rule.weights.empty()) {
    if (rule.weights.size() != path_probs.size()) {
      throw std::invalid_argument("aggregate: " + std::to_string(rule.weights.size()) + " weights for " +
                                  std::to_string(path_probs.size()) + " paths");
    }
    double z = 0;
    for (double v : rule.weights) {
      if (!(v >= 0)) throw std::invalid_argument("aggregate: weights must be nonnegative");
      z += v;
    }
    if (std::abs(z - 1.0) > 1e-9) throw std::invalid_argument("aggregate: weights must sum to 1");
    w = rule.weights;
  } else {
    w = confidence_weights(path_probs);
  }
  if (path_probs.size() == 1) return path_probs[0];
  Tensor<double> out(shape);
  for (std::size_t k = 0; k < path_probs.size(); ++k)
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += w[k] * path_probs[k][j];
  return out;
}

std::vector<std::size_t> argmax_rows(const Tensor<double>& probs) {
  const std::size_t n = probs.shape()[0], c = probs.shape()[1];
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (probs.at(i, j) > probs.at(i, best)) best = j;
    out[i] = best;
  }
  return out;
}

Tensor<double> bagged_predict(const BetaModel& model, const BackboneWeights<float>& theta, const LabeledSet& train,
                              const Tensor<float>& query_x, const ContextStrategy& strategy, const AggregationRule& rule,
                              std::size_t workers) {
  strategy.validate();
  check_inputs(train, query_x);
  if (model.head == HeadMode::ecoc && (!model.codebook || model.codebook->length != model.paths())) {
    throw std::invalid_argument("bagged_predict: ECOC needs one path per code bit");
  }
  if (train.n_classes != model.n_classes) {
    throw std::invalid_argument("bagged_predict: model has " + std::to_string(model.n_classes) +
                                " classes, training set " + std::to_string(train.n_classes));
  }
  if (strategy.kind != ContextStrategy::Kind::knn) {
    return bagged_batch(model, theta, train, query_x, strategy, rule, workers);
  }
  const std::size_t nq = query_x.shape()[0];
  Tensor<double> out({nq, model.n_classes});
  for (std::size_t i = 0; i < nq; ++i) {
    const Tensor<float> q = query_row(query_x, i);
    const LabeledSet support = train.subset(knn_context(train.x, q.values(), strategy.k));
    std::vector<Tensor<double>> per_path(model.paths());
    parallel_for(model.paths(), workers,
                 [&](std::size_t k) { per_path[k] = path_probabilities(model, theta, k, support, q); });
    copy_rows(combine_paths(model, per_path, rule), out, i);
  }
  return out;
}

Tensor<double> pfn_predict(const BackboneWeights<float>& theta, const LabeledSet& train, const Tensor<float>& query_x,
                           const ContextStrategy& strategy, const AggregationRule& rule, std::size_t workers,
                           std::size_t code_length) {
  strategy.validate();
  check_inputs(train, query_x);
  const std::size_t c = train.n_classes;
  std::optional<EcocCodebook> code;
  if (c > theta.config().c_max) code = ecoc_build(c, code_length, derive_seed(strategy.seed, 3));
  const EcocCodebook* code_ptr = code ? &*code : nullptr;

  if (strategy.kind != ContextStrategy::Kind::knn) {
    const std::size_t n_ctx = strategy.kind == ContextStrategy::Kind::bootstrap ? strategy.contexts : 1;
    std::vector<LabeledSet> contexts;
    for (std::size_t k = 0; k < n_ctx; ++k) contexts.push_back(train.subset(context_rows(strategy, train.size(), k)));
    return backbone_contexts(theta, contexts, query_x, rule, code_ptr, workers);
  }
  const std::size_t nq = query_x.shape()[0];
  Tensor<double> out({nq, c});
  for (std::size_t i = 0; i < nq; ++i) {
    const Tensor<float> q = query_row(query_x, i);
    std::vector<LabeledSet> support{train.subset(knn_context(train.x, q.values(), strategy.k))};
    copy_rows(backbone_contexts(theta, support, q, rule, code_ptr, workers), out, i);
  }
  return out;
}

Tensor<double> feature_shuffle_ensemble(const Episode& episode, const BackboneWeights<float>& theta,
                                        std::size_t rounds, std::uint64_t seed, std::size_t workers) {
  if (rounds == 0) throw std::invalid_argument("feature_shuffle_ensemble: at least one round is required");
  episode.validate();
  const std::size_t d = episode.n_features();
  std::vector<Tensor<double>> parts(rounds);
  parallel_for(rounds, workers, [&](std::size_t r) {
    std::vector<std::size_t> perm = all_rows(d);
    if (r > 0) {
      SplitMix64 rng(derive_seed(seed, r));
      shuffle(perm, rng);
    }
    auto permute = [&](const Tensor<float>& x) {
      Tensor<float> out(x.shape());
      for (std::size_t i = 0; i < x.shape()[0]; ++i)
        for (std::size_t j = 0; j < d; ++j) out.at(i, j) = x.at(i, perm[j]);
      return out;
    };
    Episode ep{permute(episode.support_x), episode.support_y, permute(episode.query_x), {}, episode.n_classes};
    parts[r] = class_probabilities(pfn_forward(ep, theta), episode.n_classes);
  });
  return aggregate(parts, {});
}

void write_predictions(std::ostream& out, const Tensor<double>& probs, char separator) {
  const std::size_t c = probs.shape()[1];
  for (std::size_t j = 0; j < c; ++j) out << "p" << j << separator;
  out << "label\n";
  const auto labels = argmax_rows(probs);
  out << std::setprecision(9);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (std::size_t j = 0; j < c; ++j) out << probs.at(i, j) << separator;
    out << labels[i] << '\n';
  }
}

}  // namespace beta
