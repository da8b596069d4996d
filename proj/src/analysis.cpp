#include "beta/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <set>
#include <stdexcept>

#include "beta/dataset.hpp"
#include "beta/parallel.hpp"
#include "beta/rng.hpp"

namespace beta {
namespace {

struct Holdout {
  LabeledSet fit, val;
};

/// Random train/val split of `train`; val rows of classes missing from the fit part are dropped.
Holdout holdout(const LabeledSet& train, double fraction, std::uint64_t seed) {
  SplitMix64 rng(seed);
  const auto order = permutation(train.size(), rng);
  const auto n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(train.size())));
  std::vector<std::size_t> fit(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::set<int> seen;
  for (std::size_t i : fit) seen.insert(train.y[i]);
  std::vector<std::size_t> val;
  for (std::size_t k = 0; k < n_val; ++k)
    if (seen.count(train.y[order[k]])) val.push_back(order[k]);
  return {train.subset(fit), train.subset(val)};
}

Tensor<float> select_columns(const Tensor<float>& x, const std::vector<std::size_t>& cols) {
  const std::size_t n = x.shape()[0];
  Tensor<float> out({n, cols.size()});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < cols.size(); ++j) out.at(i, j) = x.at(i, cols[j]);
  return out;
}

bool is_plain(VariantKind kind) { return kind != VariantKind::beta; }

}  // namespace

const char* variant_name(VariantKind kind) {
  switch (kind) {
    case VariantKind::tabpfn_full: return "tabpfn-full";
    case VariantKind::tabpfn_1000: return "tabpfn-1000";
    case VariantKind::tabpfn_en16: return "tabpfn-en16";
    case VariantKind::tabpfn_knn: return "tabpfn-knn";
    case VariantKind::tabpfn_finetune: return "tabpfn-finetune";
    case VariantKind::tabpfn_bagging: return "tabpfn-bagging";
    case VariantKind::beta: return "beta";
  }
  return "?";
}

VariantKind parse_variant(const std::string& name) {
  for (auto kind : {VariantKind::tabpfn_full, VariantKind::tabpfn_1000, VariantKind::tabpfn_en16,
                    VariantKind::tabpfn_knn, VariantKind::tabpfn_finetune, VariantKind::tabpfn_bagging,
                    VariantKind::beta}) {
    const std::string full = variant_name(kind);
    if (name == full || (full.rfind("tabpfn-", 0) == 0 && name == full.substr(7))) return kind;
  }
  throw std::invalid_argument("unknown variant '" + name +
                              "' (expected full, 1000, en16, knn, finetune, bagging or beta)");
}

void VariantSpec::validate() const {
  if (context_size == 0) throw std::invalid_argument("variant: context size must be positive");
  if (contexts == 0 || shuffles == 0) throw std::invalid_argument("variant: contexts and shuffles must be positive");
  if (!(val_fraction > 0 && val_fraction < 1)) throw std::invalid_argument("variant: val fraction must lie in (0, 1)");
  finetune.validate();
}

VariantSpec VariantSpec::make(VariantKind kind, std::size_t context_size) {
  VariantSpec s;
  s.kind = kind;
  s.context_size = context_size;
  s.finetune.context_size = context_size;
  if (kind == VariantKind::tabpfn_finetune) s.finetune.lr = 1e-5;
  return s;
}

Tensor<double> run_variant(const VariantSpec& spec, const BackboneWeights<float>& theta, const LabeledSet& train,
                           const Tensor<float>& test_x, std::uint64_t seed) {
  spec.validate();
  train.validate();
  const std::size_t d_max = theta.config().d_max;
  LabeledSet data = train;
  Tensor<float> queries = test_x;
  if (is_plain(spec.kind) && train.width() > d_max) {
    auto cols = subsample_indices(train.width(), d_max, derive_seed(seed, 21));
    std::sort(cols.begin(), cols.end());
    data.x = select_columns(train.x, cols);
    queries = select_columns(test_x, cols);
  }
  const std::uint64_t ctx_seed = derive_seed(seed, 11);
  const std::size_t n = data.size();
  using K = VariantKind;
  switch (spec.kind) {
    case K::tabpfn_full:
      return pfn_predict(theta, data, queries, ContextStrategy::full(), {}, spec.workers, spec.code_length);
    case K::tabpfn_1000:
      return pfn_predict(theta, data, queries, ContextStrategy::subsample(spec.context_size, ctx_seed), {},
                         spec.workers, spec.code_length);
    case K::tabpfn_knn:
      return pfn_predict(theta, data, queries, ContextStrategy::knn(spec.context_size), {}, spec.workers,
                         spec.code_length);
    case K::tabpfn_bagging:
      return pfn_predict(theta, data, queries, ContextStrategy::bootstrap(spec.context_size, spec.contexts, ctx_seed),
                         {}, spec.workers, spec.code_length);
    case K::tabpfn_en16: {
      if (data.n_classes > theta.config().c_max) {
        throw std::invalid_argument("tabpfn-en16 supports at most " + std::to_string(theta.config().c_max) + " classes");
      }
      const LabeledSet support = data.subset(subsample_indices(n, spec.context_size, ctx_seed));
      Episode ep{support.x, support.y, queries, {}, data.n_classes};
      return feature_shuffle_ensemble(ep, theta, spec.shuffles, derive_seed(seed, 12), spec.workers);
    }
    case K::tabpfn_finetune: {
      const Holdout h = holdout(data, spec.val_fraction, derive_seed(seed, 13));
      FinetuneConfig cfg = spec.finetune;
      cfg.seed = derive_seed(seed, 14);
      const BackboneWeights<float> tuned = finetune_backbone(theta, h.fit, h.val, cfg);
      return pfn_predict(tuned, data, queries, ContextStrategy::subsample(spec.context_size, ctx_seed), {},
                         spec.workers, spec.code_length);
    }
    case K::beta: {
      const Holdout h = holdout(data, spec.val_fraction, derive_seed(seed, 13));
      FinetuneConfig cfg = spec.finetune;
      cfg.seed = derive_seed(seed, 14);
      cfg.workers = spec.workers;
      cfg.code_length = spec.code_length;
      const FinetuneResult fit = finetune(theta, h.fit, h.val, cfg);
      return bagged_predict(fit.model, theta, data, queries, ContextStrategy::bootstrap(spec.context_size, 16, ctx_seed),
                            {}, spec.workers);
    }
  }
  throw std::logic_error("run_variant: unhandled variant");
}

BiasVarianceReport decompose(const std::vector<Tensor<double>>& predictions, std::span<const int> labels) {
  const std::size_t m = predictions.size();
  if (m < 2) throw std::invalid_argument("bias-variance: at least two replicates are required, got " + std::to_string(m));
  const Shape& shape = predictions[0].shape();
  if (shape.size() != 2 || shape[0] != labels.size()) {
    throw ShapeError("bias-variance: predictions " + shape_to_string(shape) + " for " + std::to_string(labels.size()) +
                     " labels");
  }
  for (const auto& p : predictions)
    if (p.shape() != shape) throw ShapeError("bias-variance", shape, p.shape());
  const std::size_t n = shape[0], c = shape[1];
  double bias2 = 0, variance = 0, gen = 0;
  std::vector<double> mean(c);
  for (std::size_t i = 0; i < n; ++i) {
    // Running mean: exact when every replicate agrees.
    for (std::size_t j = 0; j < c; ++j) {
      double mu = predictions[0].at(i, j);
      for (std::size_t r = 1; r < m; ++r) mu += (predictions[r].at(i, j) - mu) / static_cast<double>(r + 1);
      mean[j] = mu;
    }
    for (std::size_t j = 0; j < c; ++j) {
      const double target = static_cast<int>(j) == labels[i] ? 1.0 : 0.0;
      bias2 += (mean[j] - target) * (mean[j] - target);
      for (std::size_t r = 0; r < m; ++r) {
        const double q = predictions[r].at(i, j);
        variance += (q - mean[j]) * (q - mean[j]) / static_cast<double>(m);
        gen += (q - target) * (q - target) / static_cast<double>(m);
      }
    }
  }
  BiasVarianceReport rep;
  rep.replicates = m;
  rep.bias2 = bias2 / static_cast<double>(n);
  rep.variance = variance / static_cast<double>(n);
  rep.gen_error = gen / static_cast<double>(n);
  return rep;
}

BiasVarianceReport bias_variance_estimate(const VariantSpec& spec, const BackboneWeights<float>& theta,
                                          const LabeledSet& train, const LabeledSet& test, std::size_t replicates,
                                          std::uint64_t seed, bool resample) {
  if (replicates < 2) {
    throw std::invalid_argument("bias-variance: at least two replicates are required, got " + std::to_string(replicates));
  }
  spec.validate();
  std::vector<Tensor<double>> preds(replicates);
  VariantSpec inner = spec;
  inner.workers = 1;
  parallel_for(replicates, spec.workers, [&](std::size_t r) {
    const LabeledSet sample = resample ? train.subset(bootstrap_sample(train.size(), train.size(), derive_seed(seed, r)))
                                       : train;
    preds[r] = run_variant(inner, theta, sample, test.x, derive_seed(derive_seed(seed, 0xB1A5), r));
  });
  BiasVarianceReport rep = decompose(preds, test.y);
  rep.variant = variant_name(spec.kind);
  rep.context_size = spec.kind == VariantKind::tabpfn_full ? train.size() : spec.context_size;
  return rep;
}

std::vector<BiasVarianceReport> run_variant_study(const std::vector<VariantSpec>& variants,
                                                  const std::vector<StudyDataset>& datasets,
                                                  const std::vector<std::size_t>& context_sizes,
                                                  std::size_t replicates, std::uint64_t seed,
                                                  const BackboneWeights<float>& theta, std::ostream* progress) {
  std::vector<BiasVarianceReport> out;
  for (const auto& variant : variants) {
    for (std::size_t di = 0; di < datasets.size(); ++di) {
      for (std::size_t ctx : context_sizes) {
        VariantSpec spec = variant;
        spec.context_size = ctx;
        spec.finetune.context_size = ctx;
        // Seeds depend on dataset and context only, so variants share replicates.
        const std::uint64_t s = derive_seed(derive_seed(seed, di), ctx);
        BiasVarianceReport rep = bias_variance_estimate(spec, theta, datasets[di].train, datasets[di].test, replicates, s);
        rep.dataset = datasets[di].name;
        if (progress) {
          *progress << rep.variant << '\t' << rep.dataset << '\t' << rep.context_size << '\t' << rep.variance
                    << std::endl;
        }
        out.push_back(std::move(rep));
      }
    }
  }
  return out;
}

void write_report(std::ostream& out, const std::vector<BiasVarianceReport>& reports) {
  out << "variant\tdataset\tcontext_size\tM\tbias2\tvariance\tgen_error\n";
  out << std::setprecision(9);
  for (const auto& r : reports) {
    out << r.variant << '\t' << r.dataset << '\t' << r.context_size << '\t' << r.replicates << '\t' << r.bias2 << '\t'
        << r.variance << '\t' << r.gen_error << '\n';
  }
}

StudyDataset make_synthetic(const SyntheticTask& task) {
  if (task.classes < 2 || task.n < 2) throw std::invalid_argument("synthetic task: need at least two rows and classes");
  if (task.informative == 0 || task.informative_offset + task.informative > task.d) {
    throw std::invalid_argument("synthetic task: informative columns fall outside the table");
  }
  SplitMix64 rng(task.seed);
  Tensor<double> x({task.n, task.d});
  for (double& v : x.values()) v = rng.normal();
  std::vector<int> y(task.n);
  const std::size_t inf = task.informative, off = task.informative_offset, c = task.classes;
  if (task.kind == SyntheticTask::Kind::gaussian) {
    std::vector<double> means(c * inf);
    for (double& v : means) v = task.separation * rng.normal();
    for (std::size_t i = 0; i < task.n; ++i) {
      const std::size_t cls = rng.index(c);
      y[i] = static_cast<int>(cls);
      for (std::size_t j = 0; j < inf; ++j) x.at(i, off + j) += means[cls * inf + j];
    }
  } else {
    const std::size_t h = task.teacher_hidden;
    std::vector<double> w1(inf * h), b1(h), w2(h * c);
    for (double& v : w1) v = rng.normal() * 2.0 / std::sqrt(static_cast<double>(inf));
    for (double& v : b1) v = rng.normal();
    for (double& v : w2) v = rng.normal() / std::sqrt(static_cast<double>(h));
    Tensor<double> logits({task.n, c});
    std::vector<double> hidden(h);
    for (std::size_t i = 0; i < task.n; ++i) {
      for (std::size_t k = 0; k < h; ++k) {
        double a = b1[k];
        for (std::size_t j = 0; j < inf; ++j) a += x.at(i, off + j) * w1[j * h + k];
        hidden[k] = std::tanh(a);
      }
      for (std::size_t cls = 0; cls < c; ++cls) {
        double a = 0;
        for (std::size_t k = 0; k < h; ++k) a += hidden[k] * w2[k * c + cls];
        logits.at(i, cls) = task.separation * a;
      }
    }
    // Centre each class score so argmax labels are roughly balanced.
    for (std::size_t cls = 0; cls < c; ++cls) {
      double m = 0;
      for (std::size_t i = 0; i < task.n; ++i) m += logits.at(i, cls);
      m /= static_cast<double>(task.n);
      for (std::size_t i = 0; i < task.n; ++i) logits.at(i, cls) -= m;
    }
    for (std::size_t i = 0; i < task.n; ++i) {
      std::size_t best = 0;
      for (std::size_t cls = 1; cls < c; ++cls)
        if (logits.at(i, cls) > logits.at(i, best)) best = cls;
      y[i] = static_cast<int>(best);
    }
  }
  const Split split = split_rows(task.n, derive_seed(task.seed, 1), task.test_fraction, 0.0);
  const Preprocessor prep = fit_standardizer(x, split.train);
  auto part = [&](const std::vector<std::size_t>& rows) {
    return LabeledSet{prep.transform(gather_rows(x, std::span<const std::size_t>(rows))),
                      gather(std::span<const int>(y), std::span<const std::size_t>(rows)), c};
  };
  return {task.name, part(split.train), part(split.test)};
}

std::vector<StudyDataset> study_datasets(std::size_t count, std::size_t n, std::uint64_t seed) {
  std::vector<StudyDataset> out;
  for (std::size_t i = 0; i < count; ++i) {
    SplitMix64 rng(derive_seed(seed, i));
    SyntheticTask t;
    t.n = n;
    t.seed = rng.next();
    if (i % 2 == 0) {
      t.kind = SyntheticTask::Kind::gaussian;
      t.d = 4 + rng.index(13);
      t.classes = 2 + rng.index(3);
      t.informative = std::min<std::size_t>(t.d, 2 + rng.index(6));
      t.separation = 0.6 + 0.6 * rng.uniform();
    } else {
      t.kind = SyntheticTask::Kind::teacher;
      t.d = 3 + rng.index(8);
      t.classes = 2 + rng.index(2);
      t.informative = std::min<std::size_t>(t.d, 2 + rng.index(4));
      t.separation = 2.0 + 2.0 * rng.uniform();
    }
    t.name = std::string(i % 2 == 0 ? "gauss" : "teacher") + std::to_string(i);
    out.push_back(make_synthetic(t));
  }
  return out;
}

std::vector<SyntheticTask> adaptation_tasks(std::uint64_t seed, std::size_t n) {
  std::vector<SyntheticTask> tasks(4);
  auto& wide = tasks[0];
  wide.name = "wide150";
  wide.d = 150;
  wide.classes = 3;
  wide.informative = 10;
  wide.informative_offset = 110;
  wide.separation = 1.0;
  auto& huge = tasks[1];
  huge.name = "wide5000";
  huge.d = 5000;
  huge.classes = 2;
  huge.informative = 20;
  huge.separation = 0.8;
  auto& nonlinear = tasks[2];
  nonlinear.name = "nonlinear";
  nonlinear.kind = SyntheticTask::Kind::teacher;
  nonlinear.d = 8;
  nonlinear.classes = 2;
  nonlinear.informative = 8;
  nonlinear.separation = 4.0;
  auto& many = tasks[3];
  many.name = "classes15";
  many.d = 10;
  many.classes = 15;
  many.informative = 10;
  many.separation = 1.5;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    tasks[i].n = n;
    tasks[i].seed = derive_seed(seed, i);
  }
  return tasks;
}

}  // namespace beta
