#pragma once

#include <cstdint>
#include <vector>

#include "beta/autodiff.hpp"

namespace beta {

struct EncoderConfig {
  std::size_t n_paths = 16;
  std::size_t hidden = 100;
  std::size_t out = 100;  // must equal the backbone d_max
  bool periodic = true;
  std::size_t n_frequencies = 16;
  double frequency_scale = 0.1;
  std::size_t periodic_max_features = 1000;  // periodic embedding is skipped above this width
  double dropout = 0.1;

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

/// K virtual linear maps sharing W: path k computes s_k ⊙ ((r_k ⊙ x) W) + b_k.
template <class Real>
struct BatchEnsembleLinear {
  Parameter<Real> w;  // in × out
  Parameter<Real> r;  // K × in
  Parameter<Real> s;  // K × out
  Parameter<Real> b;  // K × out

  std::size_t paths() const { return r.value.shape()[0]; }
  std::size_t in() const { return w.value.shape()[0]; }
  std::size_t out() const { return w.value.shape()[1]; }
  /// Dense out×in matrix diag(s_k)·Wᵀ·diag(r_k) acting on column vectors.
  Tensor<Real> materialize(std::size_t k) const;
};

/// K encoder paths: [periodic] → BE linear → ReLU → dropout → BE linear.
template <class Real>
struct EncoderStack {
  EncoderConfig config;
  std::size_t n_features = 0;
  bool periodic = false;
  Parameter<Real> frequencies;  // d × n_frequencies, shared by all paths; empty when unused
  BatchEnsembleLinear<Real> first;
  BatchEnsembleLinear<Real> second;

  std::size_t paths() const { return first.paths(); }
  std::vector<Parameter<Real>*> parameters();
  std::vector<const Parameter<Real>*> parameters() const;
  std::size_t parameter_count() const;
  /// Parameters of one materialized single-path stack of the same widths.
  std::size_t plain_parameter_count() const;

  template <class Other>
  EncoderStack<Other> cast() const {
    auto conv = [](const Parameter<Real>& p) { return Parameter<Other>{p.name, p.value.template cast<Other>(), p.trainable}; };
    auto conv_layer = [&](const BatchEnsembleLinear<Real>& l) {
      return BatchEnsembleLinear<Other>{conv(l.w), conv(l.r), conv(l.s), conv(l.b)};
    };
    return EncoderStack<Other>{config, n_features, periodic, conv(frequencies), conv_layer(first), conv_layer(second)};
  }
};

template <class Real>
EncoderStack<Real> init_stack(std::size_t n_features, const EncoderConfig& cfg, std::uint64_t seed);

/// Path-k forward of one batch-ensemble layer. Throws std::out_of_range when k >= K.
template <class Real>
Var<Real> be_linear_forward(Tape<Real>& tape, Var<Real> x, const BatchEnsembleLinear<Real>& layer, std::size_t k);

/// Path-k latents (N × out) of the rows of x. Dropout is active only when `training`.
template <class Real>
Var<Real> encode_path(Tape<Real>& tape, Var<Real> x, const EncoderStack<Real>& stack, std::size_t k, bool training,
                      const DropoutKey& key = {});

/// Per-path latents: paths[k] is N × out.
template <class Real>
struct LatentBatch {
  std::vector<Tensor<Real>> paths;
};

template <class Real>
LatentBatch<Real> encode(const Tensor<Real>& x, const EncoderStack<Real>& stack, bool training = false,
                         std::uint64_t seed = 0);

}  // namespace beta
