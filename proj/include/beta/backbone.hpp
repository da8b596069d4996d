#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "beta/autodiff.hpp"
#include "beta/episode.hpp"
#include "beta/prior.hpp"

namespace beta {

struct BackboneConfig {
  std::size_t d_max = 100;
  std::size_t d_token = 64;
  std::size_t n_layers = 3;
  std::size_t n_heads = 4;
  std::size_t c_max = 10;
  std::size_t mlp_width = 128;
  double dropout = 0.0;

  void validate() const;
  bool operator==(const BackboneConfig&) const = default;
};

/// Raised when raw inputs are wider than the backbone; such data must go through the encoder.
class DimensionalityError : public std::invalid_argument {
 public:
  DimensionalityError(std::size_t d, std::size_t d_max);
};

/// Frozen-or-trainable transformer parameters. The parameter vector is sized once at
/// construction, so addresses stay stable for the lifetime of the object.
template <class Real>
class BackboneWeights {
 public:
  BackboneWeights(const BackboneConfig& cfg, std::uint64_t seed);
  /// Zero-initialized, for deserialization.
  explicit BackboneWeights(const BackboneConfig& cfg);

  const BackboneConfig& config() const noexcept { return config_; }
  std::vector<Parameter<Real>>& parameters() noexcept { return params_; }
  const std::vector<Parameter<Real>>& parameters() const noexcept { return params_; }
  Parameter<Real>& get(const std::string& name);
  const Parameter<Real>& get(const std::string& name) const;
  void set_trainable(bool trainable);

  template <class Other>
  BackboneWeights<Other> cast() const {
    BackboneWeights<Other> out(config_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      out.parameters()[i].value = params_[i].value.template cast<Other>();
      out.parameters()[i].trainable = params_[i].trainable;
    }
    return out;
  }

  // Indices into parameters(), resolved once.
  struct LayerSlots {
    std::size_t ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
  };
  std::size_t w_x = 0, w_y = 0, final_g = 0, final_b = 0, head_w = 0, head_b = 0;
  std::vector<LayerSlots> layers;

 private:
  void build(std::uint64_t seed, bool init);

  BackboneConfig config_;
  std::vector<Parameter<Real>> params_;
};

/// Allow-matrix of the in-context attention: support rows see support columns; query row i
/// sees the support columns and column i.
struct AttentionMask {
  std::size_t n_support = 0;
  std::size_t n_query = 0;

  std::size_t size() const noexcept { return n_support + n_query; }
  bool allows(std::size_t row, std::size_t col) const noexcept {
    return col < n_support || (row >= n_support && row == col);
  }
  std::vector<std::vector<bool>> dense() const;
};

template <class Real>
std::vector<Real> zero_pad(std::span<const Real> x, std::size_t d_max);
/// Row-wise zero padding of an N×d matrix to N×d_max.
template <class Real>
Tensor<Real> zero_pad_rows(const Tensor<Real>& x, std::size_t d_max);

struct ForwardOptions {
  bool training = false;
  DropoutKey dropout_key{};
};

/// Token matrix (support rows first): x̃ W_x + y w_y for support, x̃ W_x for queries.
template <class Real>
Var<Real> embed_tokens(Tape<Real>& tape, const BackboneWeights<Real>& weights, Var<Real> support_x,
                       std::span<const int> support_y, Var<Real> query_x);

/// Final-normalized hidden states of the query tokens (N_q × d_token).
template <class Real>
Var<Real> pfn_query_hidden(Tape<Real>& tape, const BackboneWeights<Real>& weights, Var<Real> support_x,
                           std::span<const int> support_y, Var<Real> query_x, const ForwardOptions& opts = {});

template <class Real>
Var<Real> pfn_head(Tape<Real>& tape, const BackboneWeights<Real>& weights, Var<Real> hidden);

/// Query logits (N_q × c_max) for d_max-wide support and query inputs.
template <class Real>
Var<Real> pfn_logits(Tape<Real>& tape, const BackboneWeights<Real>& weights, Var<Real> support_x,
                     std::span<const int> support_y, Var<Real> query_x, const ForwardOptions& opts = {});

/// Inference on a raw episode (zero-padded here). Logits of classes >= n_classes are -inf.
template <class Real>
Tensor<Real> pfn_forward(const Episode& episode, const BackboneWeights<Real>& weights);

/// Row-wise softmax over the first n_classes logits, in double precision.
template <class Real>
Tensor<double> class_probabilities(const Tensor<Real>& logits, std::size_t n_classes);

/// Number of backbone forward passes executed by this process (all threads).
std::uint64_t pfn_forward_count() noexcept;

struct PretrainConfig {
  std::size_t steps = 3000;
  std::size_t episodes_per_step = 4;
  double lr = 1e-3;
  double weight_decay = 0.0;
  std::size_t warmup = 100;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  std::size_t log_every = 100;
};

struct PretrainRecord {
  std::size_t step;
  double loss;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Minimize mean query cross-entropy over prior episodes. Writes "step\tloss" lines to `log`.
BackboneWeights<float> pretrain_backbone(const BackboneConfig& cfg, const PriorConfig& prior,
                                         const PretrainConfig& train, std::ostream* log = nullptr,
                                         std::vector<PretrainRecord>* curve = nullptr);

}  // namespace beta
