#include "beta/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <set>
#include <stdexcept>
#include <string>

#include "beta/parallel.hpp"
#include "beta/rng.hpp"

namespace beta {
namespace {

struct EvalResult {
  double train_nll = 0;
  double val_nll = 0;
  double val_accuracy = 0;
};

double mean_nll(const Tensor<double>& probs, std::span<const int> labels, std::size_t begin, std::size_t end) {
  double total = 0;
  for (std::size_t i = begin; i < end; ++i) {
    total -= std::log(std::max(probs.at(i, static_cast<std::size_t>(labels[i - begin])), 1e-12));
  }
  return end > begin ? total / static_cast<double>(end - begin) : 0.0;
}

double accuracy(const Tensor<double>& probs, std::span<const int> labels, std::size_t begin, std::size_t end) {
  std::size_t hits = 0;
  const std::size_t c = probs.shape()[1];
  for (std::size_t i = begin; i < end; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k)
      if (probs.at(i, k) > probs.at(i, best)) best = k;
    hits += static_cast<int>(best) == labels[i - begin];
  }
  return end > begin ? static_cast<double>(hits) / static_cast<double>(end - begin) : 0.0;
}

Tensor<float> stack_rows(const Tensor<float>& a, const Tensor<float>& b) {
  if (a.size() == 0) return b;
  if (b.size() == 0) return a;
  std::vector<float> data(a.values().begin(), a.values().end());
  data.insert(data.end(), b.values().begin(), b.values().end());
  return Tensor<float>({a.shape()[0] + b.shape()[0], a.shape()[1]}, std::move(data));
}

/// Per-path class probabilities for shared support rows and a batch of queries.
Tensor<double> model_probabilities(const BetaModel& model, const BackboneWeights<float>& theta,
                                   const Tensor<float>& sx, std::span<const int> sy, const Tensor<float>& qx,
                                   std::size_t workers) {
  std::vector<Tensor<double>> per_path(model.paths());
  parallel_for(model.paths(), workers, [&](std::size_t k) {
    Tape<float> tape(false);
    auto logits = path_logits(tape, model, theta, k, tape.constant(sx), sy, tape.constant(qx), false);
    per_path[k] = class_probabilities(logits.value(), model.path_classes());
  });
  const std::size_t nq = qx.shape()[0];
  Tensor<double> out({nq, model.n_classes});
  if (model.head == HeadMode::ecoc) {
    std::vector<double> bits(model.paths());
    for (std::size_t i = 0; i < nq; ++i) {
      for (std::size_t k = 0; k < model.paths(); ++k) bits[k] = per_path[k].at(i, 1);
      const auto p = ecoc_class_probabilities(*model.codebook, bits);
      std::copy(p.begin(), p.end(), out.data() + i * model.n_classes);
    }
    return out;
  }
  for (const auto& p : per_path)
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += p[j];
  for (double& v : out.values()) v /= static_cast<double>(model.paths());
  return out;
}

std::size_t count_distinct(std::span<const int> labels) { return std::set<int>(labels.begin(), labels.end()).size(); }

void check_training_data(const LabeledSet& train, const LabeledSet& val) {
  train.validate();
  if (train.size() == 0) throw std::invalid_argument("finetune: training set is empty");
  if (count_distinct(train.y) < 2) {
    throw std::invalid_argument("finetune: training set has a single class; at least two are required");
  }
  if (val.size() > 0) {
    val.validate();
    if (val.width() != train.width()) throw std::invalid_argument("finetune: train and val widths differ");
    const std::set<int> seen(train.y.begin(), train.y.end());
    for (int y : val.y) {
      if (!seen.count(y)) throw std::invalid_argument("finetune: val class " + std::to_string(y) + " is absent from train");
    }
  }
}

std::size_t auto_steps(const FinetuneConfig& cfg, std::size_t n, std::size_t query_rows) {
  if (cfg.steps_per_epoch) return cfg.steps_per_epoch;
  return std::max<std::size_t>(1, (n + std::max<std::size_t>(1, query_rows) - 1) / std::max<std::size_t>(1, query_rows));
}

}  // namespace

const char* head_mode_name(HeadMode mode) {
  switch (mode) {
    case HeadMode::native: return "native";
    case HeadMode::extended: return "extended";
    case HeadMode::ecoc: return "ecoc";
  }
  return "?";
}

HeadMode parse_head_mode(const std::string& name) {
  if (name == "native") return HeadMode::native;
  if (name == "extended") return HeadMode::extended;
  if (name == "ecoc") return HeadMode::ecoc;
  throw std::invalid_argument("unknown head mode '" + name + "' (expected native, extended or ecoc)");
}

void FinetuneConfig::validate() const {
  if (!(lr > 0)) throw std::invalid_argument("finetune: learning rate must be positive");
  if (!(weight_decay >= 0)) throw std::invalid_argument("finetune: weight decay must be nonnegative");
  if (batch_size == 0 || context_size == 0) throw std::invalid_argument("finetune: batch and context sizes must be positive");
  if (patience == 0) throw std::invalid_argument("finetune: patience must be positive");
  if (!(grad_clip > 0)) throw std::invalid_argument("finetune: grad clip must be positive");
  if (code_length == 0) throw std::invalid_argument("finetune: code length must be positive");
  encoder.validate();
}

std::vector<int> BetaModel::path_labels(std::span<const int> labels, std::size_t k) const {
  if (head == HeadMode::ecoc) return ecoc_column_labels(*codebook, labels, k);
  return {labels.begin(), labels.end()};
}

std::vector<Parameter<float>*> BetaModel::trainable() {
  auto params = stack.parameters();
  if (extended) {
    params.push_back(&extended->w);
    params.push_back(&extended->b);
  }
  return params;
}

Var<float> path_logits(Tape<float>& tape, const BetaModel& model, const BackboneWeights<float>& theta, std::size_t k,
                       Var<float> support_x, std::span<const int> support_y, Var<float> query_x, bool training,
                       const DropoutKey& key) {
  const std::size_t ns = support_x.shape()[0];
  auto z = encode_path(tape, concat_rows(support_x, query_x), model.stack, k, training, key);
  auto zs = slice_rows(z, 0, ns);
  auto zq = slice_rows(z, ns, z.shape()[0]);
  const auto labels = model.path_labels(support_y, k);
  if (model.head == HeadMode::extended) {
    auto hidden = pfn_query_hidden(tape, theta, zs, labels, zq);
    return add_row(matmul(hidden, tape.parameter(model.extended->w)), tape.parameter(model.extended->b));
  }
  return pfn_logits(tape, theta, zs, labels, zq);
}

template <class Real>
Var<Real> multi_encoder_loss(Tape<Real>& tape, const std::vector<Var<Real>>& support_latents,
                             const std::vector<Var<Real>>& query_latents, std::span<const int> support_y,
                             std::span<const int> query_y, std::size_t n_classes, const BackboneWeights<Real>& theta) {
  if (support_latents.empty() || support_latents.size() != query_latents.size()) {
    throw std::invalid_argument("multi_encoder_loss: support and query latents need the same nonzero path count");
  }
  Var<Real> total = tape.constant(Tensor<Real>::scalar(0));
  for (std::size_t k = 0; k < support_latents.size(); ++k) {
    auto logits = pfn_logits(tape, theta, support_latents[k], support_y, query_latents[k]);
    total = add(total, cross_entropy(logits, query_y, n_classes));
  }
  return total;
}

template Var<float> multi_encoder_loss<float>(Tape<float>&, const std::vector<Var<float>>&,
                                              const std::vector<Var<float>>&, std::span<const int>,
                                              std::span<const int>, std::size_t, const BackboneWeights<float>&);
template Var<double> multi_encoder_loss<double>(Tape<double>&, const std::vector<Var<double>>&,
                                                const std::vector<Var<double>>&, std::span<const int>,
                                                std::span<const int>, std::size_t, const BackboneWeights<double>&);

EpisodeIndices sample_training_episode(std::size_t n, std::size_t context_size, std::size_t batch, std::uint64_t seed) {
  if (n < 2) throw std::invalid_argument("training episodes need at least two rows");
  SplitMix64 rng(seed);
  const auto order = permutation(n, rng);
  const std::size_t ns = std::min({context_size, (8 * n + 9) / 10, n - 1});
  const std::size_t nq = std::min(batch, n - ns);
  EpisodeIndices ep;
  ep.support.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(ns));
  ep.query.assign(order.begin() + static_cast<std::ptrdiff_t>(ns), order.begin() + static_cast<std::ptrdiff_t>(ns + nq));
  return ep;
}

FinetuneResult finetune(const BackboneWeights<float>& theta, const LabeledSet& train, const LabeledSet& val,
                        const FinetuneConfig& cfg, std::ostream* log) {
  cfg.validate();
  check_training_data(train, val);
  const auto& bcfg = theta.config();
  const std::size_t c = train.n_classes;

  BetaModel model;
  model.n_classes = c;
  if (cfg.extended_head) {
    model.head = HeadMode::extended;
  } else if (c > bcfg.c_max) {
    if (cfg.wide_head == HeadMode::native) {
      throw std::invalid_argument("finetune: " + std::to_string(c) + " classes exceed the native head; use ecoc or extended");
    }
    model.head = cfg.wide_head;
  }
  EncoderConfig enc = cfg.encoder;
  if (enc.out != bcfg.d_max) {
    throw std::invalid_argument("finetune: encoder output width " + std::to_string(enc.out) + " must equal backbone d_max " +
                                std::to_string(bcfg.d_max));
  }
  if (model.head == HeadMode::ecoc) {
    model.codebook = ecoc_build(c, cfg.code_length, derive_seed(cfg.seed, 3));
    enc.n_paths = model.codebook->length;
  }
  model.stack = init_stack<float>(train.width(), enc, derive_seed(cfg.seed, 4));
  if (model.head == HeadMode::extended) {
    SplitMix64 rng(derive_seed(cfg.seed, 6));
    ExtendedHead head{{"head_ext.w", Tensor<float>({bcfg.d_token, c}), true}, {"head_ext.b", Tensor<float>({c}), true}};
    const auto& w0 = theta.parameters()[theta.head_w].value;
    const auto& b0 = theta.parameters()[theta.head_b].value;
    const double bound = 0.1 / std::sqrt(static_cast<double>(bcfg.d_token));
    for (std::size_t j = 0; j < c; ++j) {
      for (std::size_t i = 0; i < bcfg.d_token; ++i) {
        head.w.value.at(i, j) = j < bcfg.c_max ? w0.at(i, j) : static_cast<float>(rng.uniform(-bound, bound));
      }
      head.b.value[j] = j < bcfg.c_max ? b0[j] : 0.0f;
    }
    model.extended = std::move(head);
  }

  BackboneWeights<float> frozen = theta;
  frozen.set_trainable(false);

  const std::size_t n = train.size();
  const EpisodeIndices probe = sample_training_episode(n, cfg.context_size, cfg.batch_size, derive_seed(cfg.seed, 5));
  const LabeledSet probe_support = train.subset(probe.support);
  const LabeledSet probe_query = train.subset(probe.query);
  const Tensor<float> eval_queries = stack_rows(probe_query.x, val.x);
  auto evaluate = [&](const BetaModel& m) {
    auto probs = model_probabilities(m, frozen, probe_support.x, probe_support.y, eval_queries, cfg.workers);
    EvalResult r;
    const std::size_t nq = probe_query.size();
    r.train_nll = mean_nll(probs, probe_query.y, 0, nq);
    if (val.size()) {
      r.val_nll = mean_nll(probs, val.y, nq, nq + val.size());
      r.val_accuracy = accuracy(probs, val.y, nq, nq + val.size());
    } else {
      r.val_nll = r.train_nll;
      r.val_accuracy = accuracy(probs, probe_query.y, 0, nq);
    }
    return r;
  };

  FinetuneResult result;
  auto record = [&](std::size_t epoch, const EvalResult& r) {
    result.history.push_back({epoch, r.train_nll, r.val_nll, r.val_accuracy});
    if (log) *log << epoch << '\t' << r.train_nll << '\t' << r.val_nll << '\t' << r.val_accuracy << std::endl;
  };
  EvalResult initial = evaluate(model);
  record(0, initial);
  BetaModel best = model;
  double best_nll = initial.val_nll;
  std::size_t since_best = 0;

  auto params = model.trainable();
  OptimizerState<float> opt_state;
  const AdamWConfig opt{cfg.lr, cfg.weight_decay};
  const std::uint64_t episode_stream = derive_seed(cfg.seed, 7);
  const std::size_t steps = auto_steps(cfg, n, sample_training_episode(n, cfg.context_size, cfg.batch_size, 0).query.size());
  std::size_t t = 0;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    for (std::size_t s = 0; s < steps; ++s, ++t) {
      const auto ep = sample_training_episode(n, cfg.context_size, cfg.batch_size, derive_seed(episode_stream, t));
      const LabeledSet sup = train.subset(ep.support), qry = train.subset(ep.query);
      std::vector<Gradients<float>> grads(model.paths());
      std::vector<double> losses(model.paths());
      parallel_for(model.paths(), cfg.workers, [&](std::size_t k) {
        Tape<float> tape;
        auto logits = path_logits(tape, model, frozen, k, tape.constant(sup.x), sup.y, tape.constant(qry.x), true,
                                  DropoutKey{cfg.seed, k, t});
        auto loss = cross_entropy(logits, model.path_labels(qry.y, k), model.path_classes());
        losses[k] = loss.value().item();
        grads[k] = tape.backward(loss);
      });
      double total_loss = 0;
      Gradients<float> total;
      for (std::size_t k = 0; k < model.paths(); ++k) {
        total_loss += losses[k];
        total.accumulate(grads[k]);
      }
      if (!std::isfinite(total_loss)) {
        throw TrainingDiverged("finetune: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                               std::to_string(t) + "; lower the learning rate");
      }
      clip_grad_norm(total, cfg.grad_clip);
      optimizer_step(opt_state, params, total, opt);
    }
    const EvalResult r = evaluate(model);
    record(epoch, r);
    if (r.val_nll < best_nll) {
      best_nll = r.val_nll;
      best = model;
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  result.model = std::move(best);
  return result;
}

BackboneWeights<float> finetune_backbone(const BackboneWeights<float>& theta, const LabeledSet& train,
                                         const LabeledSet& val, const FinetuneConfig& cfg,
                                         std::vector<EpochRecord>* history) {
  cfg.validate();
  check_training_data(train, val);
  const auto& bcfg = theta.config();
  if (train.n_classes > bcfg.c_max) {
    throw std::invalid_argument("finetune_backbone: more classes than the native head supports");
  }
  const std::size_t c = train.n_classes, n = train.size();
  BackboneWeights<float> weights = theta;
  weights.set_trainable(true);
  const LabeledSet padded_train{zero_pad_rows(train.x, bcfg.d_max), train.y, c};
  const Tensor<float> val_x = val.size() ? zero_pad_rows(val.x, bcfg.d_max) : Tensor<float>();

  const EpisodeIndices probe = sample_training_episode(n, cfg.context_size, cfg.batch_size, derive_seed(cfg.seed, 5));
  const LabeledSet probe_support = padded_train.subset(probe.support);
  const LabeledSet probe_query = padded_train.subset(probe.query);
  const Tensor<float> eval_queries = stack_rows(probe_query.x, val_x);
  auto evaluate = [&](const BackboneWeights<float>& w) {
    Episode ep{probe_support.x, probe_support.y, eval_queries, {}, c};
    auto probs = class_probabilities(pfn_forward(ep, w), c);
    const std::size_t nq = probe_query.size();
    EvalResult r;
    r.train_nll = mean_nll(probs, probe_query.y, 0, nq);
    r.val_nll = val.size() ? mean_nll(probs, val.y, nq, nq + val.size()) : r.train_nll;
    r.val_accuracy = val.size() ? accuracy(probs, val.y, nq, nq + val.size()) : accuracy(probs, probe_query.y, 0, nq);
    return r;
  };

  EvalResult initial = evaluate(weights);
  if (history) history->push_back({0, initial.train_nll, initial.val_nll, initial.val_accuracy});
  BackboneWeights<float> best = weights;
  double best_nll = initial.val_nll;
  std::size_t since_best = 0;
  std::vector<Parameter<float>*> params;
  for (auto& p : weights.parameters()) params.push_back(&p);
  OptimizerState<float> opt_state;
  const AdamWConfig opt{cfg.lr, cfg.weight_decay};
  const std::uint64_t episode_stream = derive_seed(cfg.seed, 7);
  const std::size_t steps = auto_steps(cfg, n, sample_training_episode(n, cfg.context_size, cfg.batch_size, 0).query.size());
  std::size_t t = 0;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    for (std::size_t s = 0; s < steps; ++s, ++t) {
      const auto ep = sample_training_episode(n, cfg.context_size, cfg.batch_size, derive_seed(episode_stream, t));
      const LabeledSet sup = padded_train.subset(ep.support), qry = padded_train.subset(ep.query);
      Tape<float> tape;
      auto logits = pfn_logits(tape, weights, tape.constant(sup.x), sup.y, tape.constant(qry.x),
                               ForwardOptions{true, DropoutKey{cfg.seed, 0, t}});
      auto loss = cross_entropy(logits, qry.y, c);
      if (!std::isfinite(loss.value().item())) {
        throw TrainingDiverged("finetune_backbone: non-finite loss at step " + std::to_string(t));
      }
      auto grads = tape.backward(loss);
      clip_grad_norm(grads, cfg.grad_clip);
      optimizer_step(opt_state, params, grads, opt);
    }
    const EvalResult r = evaluate(weights);
    if (history) history->push_back({epoch, r.train_nll, r.val_nll, r.val_accuracy});
    if (r.val_nll < best_nll) {
      best_nll = r.val_nll;
      best = weights;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  return best;
}

}  // namespace beta
