#include "beta/backbone.hpp"

#include <atomic>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>

#include "beta/optim.hpp"
#include "beta/rng.hpp"

namespace beta {
namespace {

std::atomic<std::uint64_t> g_forward_count{0};

template <class Real>
Tensor<Real> fan_in_uniform(Shape shape, std::size_t fan_in, double gain, SplitMix64& rng) {
  Tensor<Real> t(std::move(shape));
  const double bound = gain / std::sqrt(static_cast<double>(fan_in));
  for (Real& v : t.values()) v = static_cast<Real>(rng.uniform(-bound, bound));
  return t;
}

}  // namespace

void BackboneConfig::validate() const {
  if (d_max == 0 || d_token == 0 || n_layers == 0 || n_heads == 0 || mlp_width == 0) {
    throw std::invalid_argument("backbone: all widths and counts must be positive");
  }
  if (d_token % n_heads != 0) {
    throw std::invalid_argument("backbone: d_token " + std::to_string(d_token) + " not divisible by " +
                                std::to_string(n_heads) + " heads");
  }
  if (c_max != 10) throw std::invalid_argument("backbone: c_max is fixed at 10");
  if (!(dropout >= 0 && dropout < 1)) throw std::invalid_argument("backbone: dropout must lie in [0, 1)");
}

DimensionalityError::DimensionalityError(std::size_t d, std::size_t d_max)
    : std::invalid_argument("input has " + std::to_string(d) + " features but the backbone accepts at most " +
                            std::to_string(d_max) + "; route the data through the encoder (adapter) path") {}

template <class Real>
BackboneWeights<Real>::BackboneWeights(const BackboneConfig& cfg, std::uint64_t seed) : config_(cfg) {
  config_.validate();
  build(seed, true);
}

template <class Real>
BackboneWeights<Real>::BackboneWeights(const BackboneConfig& cfg) : config_(cfg) {
  config_.validate();
  build(0, false);
}

template <class Real>
void BackboneWeights<Real>::build(std::uint64_t seed, bool init) {
  SplitMix64 rng(seed);
  const std::size_t dt = config_.d_token, dm = config_.d_max, hw = config_.mlp_width;
  params_.reserve(6 + 16 * config_.n_layers);
  auto add = [&](std::string name, Shape shape, std::size_t fan_in, double gain = 1.0) {
    Tensor<Real> value = init && fan_in > 0 ? fan_in_uniform<Real>(shape, fan_in, gain, rng) : Tensor<Real>(shape);
    params_.push_back({std::move(name), std::move(value), true});
    return params_.size() - 1;
  };
  auto ones = [&](std::string name, std::size_t n) {
    params_.push_back({std::move(name), Tensor<Real>({n}, init ? Real(1) : Real(0)), true});
    return params_.size() - 1;
  };
  w_x = add("embed.w_x", {dm, dt}, dm);
  // Labels enter as raw indices up to c_max - 1, so the label row starts small.
  w_y = add("embed.w_y", {1, dt}, config_.c_max);
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    LayerSlots s{};
    s.ln1_g = ones(p + "ln1.gamma", dt);
    s.ln1_b = add(p + "ln1.beta", {dt}, 0);
    s.wq = add(p + "attn.wq", {dt, dt}, dt);
    s.bq = add(p + "attn.bq", {dt}, 0);
    s.wk = add(p + "attn.wk", {dt, dt}, dt);
    s.bk = add(p + "attn.bk", {dt}, 0);
    s.wv = add(p + "attn.wv", {dt, dt}, dt);
    s.bv = add(p + "attn.bv", {dt}, 0);
    s.wo = add(p + "attn.wo", {dt, dt}, dt);
    s.bo = add(p + "attn.bo", {dt}, 0);
    s.ln2_g = ones(p + "ln2.gamma", dt);
    s.ln2_b = add(p + "ln2.beta", {dt}, 0);
    s.w1 = add(p + "mlp.w1", {dt, hw}, dt);
    s.b1 = add(p + "mlp.b1", {hw}, 0);
    s.w2 = add(p + "mlp.w2", {hw, dt}, hw);
    s.b2 = add(p + "mlp.b2", {dt}, 0);
    layers.push_back(s);
  }
  final_g = ones("final_ln.gamma", dt);
  final_b = add("final_ln.beta", {dt}, 0);
  // Small head so that initial predictions are close to uniform.
  head_w = add("head.w", {dt, config_.c_max}, dt, 0.1);
  head_b = add("head.b", {config_.c_max}, 0);
}

template <class Real>
Parameter<Real>& BackboneWeights<Real>::get(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return p;
  }
  throw std::out_of_range("backbone: no parameter named " + name);
}

template <class Real>
const Parameter<Real>& BackboneWeights<Real>::get(const std::string& name) const {
  return const_cast<BackboneWeights*>(this)->get(name);
}

template <class Real>
void BackboneWeights<Real>::set_trainable(bool trainable) {
  for (auto& p : params_) p.trainable = trainable;
}

std::vector<std::vector<bool>> AttentionMask::dense() const {
  std::vector<std::vector<bool>> m(size(), std::vector<bool>(size(), false));
  for (std::size_t i = 0; i < size(); ++i)
    for (std::size_t j = 0; j < size(); ++j) m[i][j] = allows(i, j);
  return m;
}

template <class Real>
std::vector<Real> zero_pad(std::span<const Real> x, std::size_t d_max) {
  if (x.size() > d_max) throw DimensionalityError(x.size(), d_max);
  std::vector<Real> out(d_max, Real(0));
  std::copy(x.begin(), x.end(), out.begin());
  return out;
}

template <class Real>
Tensor<Real> zero_pad_rows(const Tensor<Real>& x, std::size_t d_max) {
  if (x.rank() != 2) throw ShapeError("zero_pad_rows: expected a matrix, got " + shape_to_string(x.shape()));
  const std::size_t n = x.shape()[0], d = x.shape()[1];
  if (d > d_max) throw DimensionalityError(d, d_max);
  if (d == d_max) return x;
  Tensor<Real> out({n, d_max});
  for (std::size_t i = 0; i < n; ++i) std::copy_n(x.data() + i * d, d, out.data() + i * d_max);
  return out;
}

template <class Real>
Var<Real> embed_tokens(Tape<Real>& tape, const BackboneWeights<Real>& w, Var<Real> support_x,
                       std::span<const int> support_y, Var<Real> query_x) {
  const std::size_t dm = w.config().d_max;
  if (support_x.shape().size() != 2 || support_x.shape()[1] != dm) {
    throw ShapeError("embed_tokens: support", support_x.shape(), Shape{support_y.size(), dm});
  }
  if (query_x.shape().size() != 2 || query_x.shape()[1] != dm) {
    throw ShapeError("embed_tokens: query", query_x.shape(), Shape{query_x.shape()[0], dm});
  }
  const std::size_t ns = support_x.shape()[0], nq = query_x.shape()[0];
  if (support_y.size() != ns) throw std::invalid_argument("embed_tokens: support labels and rows disagree");
  Tensor<Real> labels({ns + nq, 1});
  for (std::size_t i = 0; i < ns; ++i) labels[i] = static_cast<Real>(support_y[i]);
  const auto& params = w.parameters();
  auto features = matmul(concat_rows(support_x, query_x), tape.parameter(params[w.w_x]));
  return add(features, matmul(tape.constant(std::move(labels)), tape.parameter(params[w.w_y])));
}

template <class Real>
Var<Real> pfn_query_hidden(Tape<Real>& tape, const BackboneWeights<Real>& w, Var<Real> support_x,
                           std::span<const int> support_y, Var<Real> query_x, const ForwardOptions& opts) {
  const std::size_t ns = support_x.shape()[0];
  if (ns == 0 || support_y.empty()) throw std::invalid_argument("pfn_forward: support set is empty");
  g_forward_count.fetch_add(1, std::memory_order_relaxed);
  const auto& cfg = w.config();
  const auto& p = w.parameters();
  auto P = [&](std::size_t slot) { return tape.parameter(p[slot]); };
  const bool drop = opts.training && cfg.dropout > 0;
  auto maybe_dropout = [&](Var<Real> x, std::size_t site) {
    if (!drop) return x;
    DropoutKey key = opts.dropout_key;
    key.layer = key.layer * 1024 + site;
    return dropout(x, cfg.dropout, key);
  };

  Var<Real> h = embed_tokens(tape, w, support_x, support_y, query_x);
  const std::size_t n = h.shape()[0];
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    const auto& s = w.layers[l];
    auto a = layer_norm(h, P(s.ln1_g), P(s.ln1_b));
    auto q = add_row(matmul(a, P(s.wq)), P(s.bq));
    auto k = add_row(matmul(a, P(s.wk)), P(s.bk));
    auto v = add_row(matmul(a, P(s.wv)), P(s.bv));
    auto att = pfn_attention(q, k, v, ns, cfg.n_heads);
    h = add(h, maybe_dropout(add_row(matmul(att, P(s.wo)), P(s.bo)), 2 * l));
    auto m = layer_norm(h, P(s.ln2_g), P(s.ln2_b));
    auto f = add_row(matmul(gelu(add_row(matmul(m, P(s.w1)), P(s.b1))), P(s.w2)), P(s.b2));
    h = add(h, maybe_dropout(f, 2 * l + 1));
  }
  auto hq = slice_rows(h, ns, n);
  return layer_norm(hq, P(w.final_g), P(w.final_b));
}

template <class Real>
Var<Real> pfn_head(Tape<Real>& tape, const BackboneWeights<Real>& w, Var<Real> hidden) {
  const auto& p = w.parameters();
  return add_row(matmul(hidden, tape.parameter(p[w.head_w])), tape.parameter(p[w.head_b]));
}

template <class Real>
Var<Real> pfn_logits(Tape<Real>& tape, const BackboneWeights<Real>& w, Var<Real> support_x,
                     std::span<const int> support_y, Var<Real> query_x, const ForwardOptions& opts) {
  return pfn_head(tape, w, pfn_query_hidden(tape, w, support_x, support_y, query_x, opts));
}

template <class Real>
Tensor<Real> pfn_forward(const Episode& episode, const BackboneWeights<Real>& w) {
  episode.validate();
  const auto& cfg = w.config();
  if (episode.n_classes > cfg.c_max) {
    throw std::invalid_argument("pfn_forward: " + std::to_string(episode.n_classes) +
                                " classes exceed the native head; use the ECOC or extended-head path");
  }
  Tape<Real> tape(false);
  auto sx = tape.constant(zero_pad_rows(episode.support_x.template cast<Real>(), cfg.d_max));
  auto qx = tape.constant(zero_pad_rows(episode.query_x.template cast<Real>(), cfg.d_max));
  Tensor<Real> logits = pfn_logits(tape, w, sx, episode.support_y, qx).value();
  for (std::size_t i = 0; i < logits.shape()[0]; ++i) {
    for (std::size_t c = episode.n_classes; c < cfg.c_max; ++c) logits.at(i, c) = -std::numeric_limits<Real>::infinity();
  }
  return logits;
}

template <class Real>
Tensor<double> class_probabilities(const Tensor<Real>& logits, std::size_t n_classes) {
  if (logits.rank() != 2 || n_classes == 0 || n_classes > logits.shape()[1]) {
    throw ShapeError("class_probabilities: " + std::to_string(n_classes) + " classes for logits " +
                     shape_to_string(logits.shape()));
  }
  const std::size_t n = logits.shape()[0];
  Tensor<double> out({n, n_classes});
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < n_classes; ++c) mx = std::max(mx, static_cast<double>(logits.at(i, c)));
    double total = 0;
    for (std::size_t c = 0; c < n_classes; ++c) {
      out.at(i, c) = std::exp(static_cast<double>(logits.at(i, c)) - mx);
      total += out.at(i, c);
    }
    for (std::size_t c = 0; c < n_classes; ++c) out.at(i, c) /= total;
  }
  return out;
}

std::uint64_t pfn_forward_count() noexcept { return g_forward_count.load(std::memory_order_relaxed); }

BackboneWeights<float> pretrain_backbone(const BackboneConfig& cfg, const PriorConfig& prior,
                                         const PretrainConfig& train, std::ostream* log,
                                         std::vector<PretrainRecord>* curve) {
  cfg.validate();
  prior.validate(cfg.d_max);
  BackboneWeights<float> weights(cfg, derive_seed(train.seed, 1));
  std::vector<Parameter<float>*> params;
  for (auto& p : weights.parameters()) params.push_back(&p);
  OptimizerState<float> state;
  const std::uint64_t episode_stream = derive_seed(train.seed, 2);
  const std::size_t per_step = std::max<std::size_t>(1, train.episodes_per_step);
  double window = 0;
  std::size_t window_n = 0;
  for (std::size_t step = 0; step < train.steps; ++step) {
    Gradients<float> total;
    double step_loss = 0;
    for (std::size_t e = 0; e < per_step; ++e) {
      Episode ep = sample_episode(prior, derive_seed(episode_stream, step * per_step + e));
      Tape<float> tape;
      auto sx = tape.constant(zero_pad_rows(ep.support_x, cfg.d_max));
      auto qx = tape.constant(zero_pad_rows(ep.query_x, cfg.d_max));
      ForwardOptions opts{true, DropoutKey{train.seed, e, step}};
      auto loss = cross_entropy(pfn_logits(tape, weights, sx, ep.support_y, qx, opts), ep.query_y, ep.n_classes);
      total.accumulate(tape.backward(loss));
      step_loss += loss.value().item();
    }
    step_loss /= static_cast<double>(per_step);
    if (!std::isfinite(step_loss)) {
      throw TrainingDiverged("pretrain: non-finite loss " + std::to_string(step_loss) + " at step " +
                             std::to_string(step) + "; lower the learning rate or check the prior config");
    }
    total.scale(1.0f / static_cast<float>(per_step));
    clip_grad_norm(total, train.grad_clip);
    AdamWConfig opt{train.lr, train.weight_decay};
    // Linear warmup, then cosine decay to 10% of the peak rate.
    const double warm = train.warmup ? std::min(1.0, static_cast<double>(step + 1) / train.warmup) : 1.0;
    const double progress = static_cast<double>(step) / static_cast<double>(train.steps);
    opt.lr *= warm * (0.1 + 0.9 * 0.5 * (1 + std::cos(std::numbers::pi * progress)));
    optimizer_step(state, params, total, opt);

    if (curve) curve->push_back({step, step_loss});
    window += step_loss;
    ++window_n;
    if (log && train.log_every && ((step + 1) % train.log_every == 0 || step + 1 == train.steps)) {
      *log << (step + 1) << '\t' << window / static_cast<double>(window_n) << '\n';
      log->flush();
      window = 0;
      window_n = 0;
    }
  }
  return weights;
}

#define BETA_INSTANTIATE_BACKBONE(R)                                                                       \
  template class BackboneWeights<R>;                                                                       \
  template std::vector<R> zero_pad<R>(std::span<const R>, std::size_t);                                    \
  template Tensor<R> zero_pad_rows<R>(const Tensor<R>&, std::size_t);                                      \
  template Var<R> embed_tokens<R>(Tape<R>&, const BackboneWeights<R>&, Var<R>, std::span<const int>, Var<R>); \
  template Var<R> pfn_query_hidden<R>(Tape<R>&, const BackboneWeights<R>&, Var<R>, std::span<const int>, Var<R>, \
                                      const ForwardOptions&);                                              \
  template Var<R> pfn_head<R>(Tape<R>&, const BackboneWeights<R>&, Var<R>);                                \
  template Var<R> pfn_logits<R>(Tape<R>&, const BackboneWeights<R>&, Var<R>, std::span<const int>, Var<R>, \
                                const ForwardOptions&);                                                    \
  template Tensor<R> pfn_forward<R>(const Episode&, const BackboneWeights<R>&);                            \
  template Tensor<double> class_probabilities<R>(const Tensor<R>&, std::size_t);

BETA_INSTANTIATE_BACKBONE(float)
BETA_INSTANTIATE_BACKBONE(double)

}  // namespace beta
