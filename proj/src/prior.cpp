#include "beta/prior.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "beta/rng.hpp"

namespace beta {
namespace {

constexpr std::size_t kMaxAttempts = 1000;

std::size_t uniform_int(SplitMix64& rng, std::size_t lo, std::size_t hi) { return lo + rng.index(hi - lo + 1); }

bool covers_all_classes(const std::vector<int>& labels, std::size_t n_classes) {
  std::vector<bool> seen(n_classes, false);
  for (int y : labels) seen[static_cast<std::size_t>(y)] = true;
  return std::all_of(seen.begin(), seen.end(), [](bool b) { return b; });
}

struct Draw {
  Tensor<float> x;
  std::vector<int> y;
};

Draw draw_gaussian(const std::vector<std::vector<double>>& means, double sigma, std::size_t n, SplitMix64& rng) {
  const std::size_t c = means.size(), d = means[0].size();
  Draw out{Tensor<float>({n, d}), std::vector<int>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = rng.index(c);
    out.y[i] = static_cast<int>(label);
    for (std::size_t j = 0; j < d; ++j) out.x.at(i, j) = static_cast<float>(means[label][j] + sigma * rng.normal());
  }
  return out;
}

struct Teacher {
  std::size_t d, hidden, classes;
  std::vector<double> w1, b1, w2;
  std::vector<double> logit_mean, logit_scale;
};

Teacher make_teacher(std::size_t d, std::size_t hidden, std::size_t c, SplitMix64& rng) {
  Teacher t{d, hidden, c, {}, {}, {}, std::vector<double>(c, 0.0), std::vector<double>(c, 1.0)};
  t.w1.resize(d * hidden);
  for (double& w : t.w1) w = rng.normal() * 2.0 / std::sqrt(static_cast<double>(d));
  t.b1.resize(hidden);
  for (double& b : t.b1) b = rng.normal() * 0.5;
  t.w2.resize(hidden * c);
  for (double& w : t.w2) w = rng.normal();
  return t;
}

std::vector<double> teacher_logits(const Teacher& t, const float* x) {
  std::vector<double> h(t.hidden);
  for (std::size_t k = 0; k < t.hidden; ++k) {
    double s = t.b1[k];
    for (std::size_t j = 0; j < t.d; ++j) s += x[j] * t.w1[j * t.hidden + k];
    h[k] = std::tanh(s);
  }
  std::vector<double> z(t.classes, 0.0);
  for (std::size_t c = 0; c < t.classes; ++c) {
    for (std::size_t k = 0; k < t.hidden; ++k) z[c] += h[k] * t.w2[k * t.classes + c];
  }
  return z;
}

/// Calibrate per-class logit centering on a reference sample so that argmax labels are
/// roughly balanced across classes.
void calibrate_teacher(Teacher& t, SplitMix64& rng) {
  constexpr std::size_t n_ref = 256;
  std::vector<std::vector<double>> zs;
  std::vector<float> x(t.d);
  for (std::size_t i = 0; i < n_ref; ++i) {
    for (float& v : x) v = static_cast<float>(rng.normal());
    zs.push_back(teacher_logits(t, x.data()));
  }
  for (std::size_t c = 0; c < t.classes; ++c) {
    double m = 0, s = 0;
    for (const auto& z : zs) m += z[c];
    m /= n_ref;
    for (const auto& z : zs) s += (z[c] - m) * (z[c] - m);
    t.logit_mean[c] = m;
    t.logit_scale[c] = 1.0 / std::max(std::sqrt(s / n_ref), 1e-6);
  }
}

Draw draw_teacher(const Teacher& t, double noise, std::size_t n, SplitMix64& rng) {
  Draw out{Tensor<float>({n, t.d}), std::vector<int>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    float* row = out.x.data() + i * t.d;
    for (std::size_t j = 0; j < t.d; ++j) row[j] = static_cast<float>(rng.normal());
    const auto z = teacher_logits(t, row);
    std::size_t best = 0;
    double best_v = -1e300;
    for (std::size_t c = 0; c < t.classes; ++c) {
      const double v = (z[c] - t.logit_mean[c]) * t.logit_scale[c] + noise * rng.normal();
      if (v > best_v) {
        best_v = v;
        best = c;
      }
    }
    out.y[i] = static_cast<int>(best);
  }
  return out;
}

}  // namespace

void PriorConfig::validate(std::size_t d_max) const {
  auto range = [](const char* name, std::size_t lo, std::size_t hi) {
    if (lo == 0 || lo > hi) {
      throw std::invalid_argument(std::string("prior: invalid ") + name + " range [" + std::to_string(lo) + ", " +
                                  std::to_string(hi) + "]");
    }
  };
  range("feature", d_lo, d_hi);
  range("class", c_lo, c_hi);
  range("support size", n_support_lo, n_support_hi);
  range("query size", n_query_lo, n_query_hi);
  if (c_lo < 2) throw std::invalid_argument("prior: at least two classes are required");
  if (c_hi > 10) throw std::invalid_argument("prior: class count above 10");
  if (d_hi > d_max) {
    throw std::invalid_argument("prior: d_hi " + std::to_string(d_hi) + " exceeds backbone width " +
                                std::to_string(d_max));
  }
  if (gaussian_weight < 0 || mlp_weight < 0 || gaussian_weight + mlp_weight <= 0) {
    throw std::invalid_argument("prior: family weights must be nonnegative with a positive sum");
  }
  if (noise < 0 || separation < 0) throw std::invalid_argument("prior: noise and separation must be nonnegative");
  if (max_informative == 0 || teacher_hidden == 0) throw std::invalid_argument("prior: zero-sized generator");
}

void standardize_by_support(Episode& ep) {
  const std::size_t ns = ep.n_support(), nq = ep.n_query(), d = ep.n_features();
  for (std::size_t j = 0; j < d; ++j) {
    double m = 0, s = 0;
    for (std::size_t i = 0; i < ns; ++i) m += ep.support_x.at(i, j);
    m /= static_cast<double>(ns);
    for (std::size_t i = 0; i < ns; ++i) s += (ep.support_x.at(i, j) - m) * (ep.support_x.at(i, j) - m);
    const double sd = std::sqrt(s / static_cast<double>(ns));
    auto apply = [&](float v) { return sd > 0 ? static_cast<float>((v - m) / sd) : 0.0f; };
    for (std::size_t i = 0; i < ns; ++i) ep.support_x.at(i, j) = apply(ep.support_x.at(i, j));
    for (std::size_t i = 0; i < nq; ++i) ep.query_x.at(i, j) = apply(ep.query_x.at(i, j));
  }
}

Episode sample_mixture_episode(const GaussianMixture& mixture, std::size_t n_support, std::size_t n_query,
                               std::uint64_t seed) {
  const std::size_t c = mixture.means.size();
  if (c < 2 || mixture.means[0].empty()) throw std::invalid_argument("mixture: need >= 2 classes and >= 1 feature");
  if (n_support < c) throw std::invalid_argument("mixture: support smaller than class count");
  SplitMix64 rng(seed);
  Draw support;
  std::size_t attempt = 0;
  do {
    if (++attempt > kMaxAttempts) throw std::runtime_error("mixture: could not cover every class");
    support = draw_gaussian(mixture.means, mixture.sigma, n_support, rng);
  } while (!covers_all_classes(support.y, c));
  Draw query = draw_gaussian(mixture.means, mixture.sigma, n_query, rng);
  Episode ep{std::move(support.x), std::move(support.y), std::move(query.x), std::move(query.y), c};
  return ep;
}

Episode sample_episode(const PriorConfig& cfg, std::uint64_t seed) {
  cfg.validate(cfg.d_hi);
  SplitMix64 rng(seed);
  const double total = cfg.gaussian_weight + cfg.mlp_weight;
  const bool gaussian = rng.uniform() * total < cfg.gaussian_weight;
  const std::size_t d = uniform_int(rng, cfg.d_lo, cfg.d_hi);
  const std::size_t c = uniform_int(rng, cfg.c_lo, cfg.c_hi);
  const std::size_t ns = std::max(uniform_int(rng, cfg.n_support_lo, cfg.n_support_hi), c);
  const std::size_t nq = uniform_int(rng, cfg.n_query_lo, cfg.n_query_hi);

  for (std::size_t attempt = 0; attempt < kMaxAttempts; ++attempt) {
    SplitMix64 gen(derive_seed(seed, attempt));
    Draw support, query;
    if (gaussian) {
      const std::size_t n_inf = uniform_int(gen, 1, std::min(d, cfg.max_informative));
      const auto dims = permutation(d, gen);
      std::vector<std::vector<double>> means(c, std::vector<double>(d, 0.0));
      for (auto& m : means) {
        for (std::size_t t = 0; t < n_inf; ++t) m[dims[t]] = cfg.separation * gen.normal();
      }
      support = draw_gaussian(means, cfg.noise, ns, gen);
      query = draw_gaussian(means, cfg.noise, nq, gen);
    } else {
      Teacher teacher = make_teacher(d, cfg.teacher_hidden, c, gen);
      calibrate_teacher(teacher, gen);
      // Teacher label noise is a fraction of the gaussian noise level.
      support = draw_teacher(teacher, 0.1 * cfg.noise, ns, gen);
      query = draw_teacher(teacher, 0.1 * cfg.noise, nq, gen);
    }
    if (!covers_all_classes(support.y, c)) continue;
    Episode ep{std::move(support.x), std::move(support.y), std::move(query.x), std::move(query.y), c};
    if (cfg.standardize) standardize_by_support(ep);
    return ep;
  }
  throw std::runtime_error("prior: could not sample an episode covering every class");
}

}  // namespace beta
