#include "beta/adapter.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "beta/rng.hpp"

namespace beta {

void EncoderConfig::validate() const {
  if (n_paths == 0) throw std::invalid_argument("encoder: at least one path is required");
  if (hidden == 0 || out == 0) throw std::invalid_argument("encoder: widths must be positive");
  if (periodic && n_frequencies == 0) throw std::invalid_argument("encoder: periodic embedding needs frequencies");
  if (!(dropout >= 0 && dropout < 1)) throw std::invalid_argument("encoder: dropout must lie in [0, 1)");
  if (!(frequency_scale >= 0)) throw std::invalid_argument("encoder: frequency scale must be nonnegative");
}

template <class Real>
Tensor<Real> BatchEnsembleLinear<Real>::materialize(std::size_t k) const {
  if (k >= paths()) throw std::out_of_range("batch-ensemble path " + std::to_string(k) + " of " + std::to_string(paths()));
  Tensor<Real> m({out(), in()});
  for (std::size_t o = 0; o < out(); ++o)
    for (std::size_t i = 0; i < in(); ++i) m.at(o, i) = s.value.at(k, o) * w.value.at(i, o) * r.value.at(k, i);
  return m;
}

template <class Real>
std::vector<Parameter<Real>*> EncoderStack<Real>::parameters() {
  std::vector<Parameter<Real>*> out;
  if (periodic) out.push_back(&frequencies);
  for (auto* l : {&first, &second}) {
    out.push_back(&l->w);
    out.push_back(&l->r);
    out.push_back(&l->s);
    out.push_back(&l->b);
  }
  return out;
}

template <class Real>
std::vector<const Parameter<Real>*> EncoderStack<Real>::parameters() const {
  auto params = const_cast<EncoderStack*>(this)->parameters();
  return {params.begin(), params.end()};
}

template <class Real>
std::size_t EncoderStack<Real>::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->value.size();
  return n;
}

template <class Real>
std::size_t EncoderStack<Real>::plain_parameter_count() const {
  const std::size_t freq = periodic ? frequencies.value.size() : 0;
  return freq + first.in() * first.out() + first.out() + second.in() * second.out() + second.out();
}

namespace {

template <class Real>
BatchEnsembleLinear<Real> make_layer(const std::string& name, std::size_t in, std::size_t out, std::size_t k,
                                     SplitMix64& rng) {
  BatchEnsembleLinear<Real> l{{name + ".w", Tensor<Real>({in, out}), true},
                              {name + ".r", Tensor<Real>({k, in}), true},
                              {name + ".s", Tensor<Real>({k, out}, Real(1)), true},
                              {name + ".b", Tensor<Real>({k, out}), true}};
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  for (Real& v : l.w.value.values()) v = static_cast<Real>(rng.uniform(-bound, bound));
  for (Real& v : l.r.value.values()) v = static_cast<Real>(rng.sign());
  return l;
}

}  // namespace

template <class Real>
EncoderStack<Real> init_stack(std::size_t n_features, const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (n_features == 0) throw std::invalid_argument("encoder: input must have at least one feature");
  SplitMix64 rng(seed);
  EncoderStack<Real> stack;
  stack.config = cfg;
  stack.n_features = n_features;
  stack.periodic = cfg.periodic && n_features <= cfg.periodic_max_features;
  std::size_t in = n_features;
  if (stack.periodic) {
    stack.frequencies = {"encoder.frequencies", Tensor<Real>({n_features, cfg.n_frequencies}), true};
    for (Real& v : stack.frequencies.value.values()) v = static_cast<Real>(cfg.frequency_scale * rng.normal());
    in = n_features * 2 * cfg.n_frequencies;
  }
  stack.first = make_layer<Real>("encoder.first", in, cfg.hidden, cfg.n_paths, rng);
  stack.second = make_layer<Real>("encoder.second", cfg.hidden, cfg.out, cfg.n_paths, rng);
  return stack;
}

template <class Real>
Var<Real> be_linear_forward(Tape<Real>& tape, Var<Real> x, const BatchEnsembleLinear<Real>& layer, std::size_t k) {
  if (k >= layer.paths()) {
    throw std::out_of_range("batch-ensemble path " + std::to_string(k) + " requested, layer has " +
                            std::to_string(layer.paths()));
  }
  if (x.shape().size() != 2 || x.shape()[1] != layer.in()) {
    throw ShapeError("be_linear_forward", x.shape(), Shape{x.shape().empty() ? 0 : x.shape()[0], layer.in()});
  }
  auto scaled = mul_row(x, select_row(tape.parameter(layer.r), k));
  auto y = mul_row(matmul(scaled, tape.parameter(layer.w)), select_row(tape.parameter(layer.s), k));
  return add_row(y, select_row(tape.parameter(layer.b), k));
}

template <class Real>
Var<Real> encode_path(Tape<Real>& tape, Var<Real> x, const EncoderStack<Real>& stack, std::size_t k, bool training,
                      const DropoutKey& key) {
  if (x.shape().size() != 2 || x.shape()[1] != stack.n_features) {
    throw ShapeError("encode", x.shape(), Shape{x.shape().empty() ? 0 : x.shape()[0], stack.n_features});
  }
  Var<Real> h = stack.periodic ? periodic_embedding(x, tape.parameter(stack.frequencies)) : x;
  h = relu(be_linear_forward(tape, h, stack.first, k));
  if (training) h = dropout(h, stack.config.dropout, key);
  return be_linear_forward(tape, h, stack.second, k);
}

template <class Real>
LatentBatch<Real> encode(const Tensor<Real>& x, const EncoderStack<Real>& stack, bool training, std::uint64_t seed) {
  LatentBatch<Real> out;
  for (std::size_t k = 0; k < stack.paths(); ++k) {
    Tape<Real> tape(false);
    out.paths.push_back(encode_path(tape, tape.constant(x), stack, k, training, DropoutKey{seed, k, 0}).value());
  }
  return out;
}

#define BETA_INSTANTIATE_ADAPTER(R)                                                                        \
  template struct BatchEnsembleLinear<R>;                                                                  \
  template struct EncoderStack<R>;                                                                         \
  template EncoderStack<R> init_stack<R>(std::size_t, const EncoderConfig&, std::uint64_t);                \
  template Var<R> be_linear_forward<R>(Tape<R>&, Var<R>, const BatchEnsembleLinear<R>&, std::size_t);      \
  template Var<R> encode_path<R>(Tape<R>&, Var<R>, const EncoderStack<R>&, std::size_t, bool, const DropoutKey&); \
  template LatentBatch<R> encode<R>(const Tensor<R>&, const EncoderStack<R>&, bool, std::uint64_t);

BETA_INSTANTIATE_ADAPTER(float)
BETA_INSTANTIATE_ADAPTER(double)

}  // namespace beta
