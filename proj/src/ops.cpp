#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>

#include "beta/autodiff.hpp"
#include "beta/rng.hpp"

namespace beta {
namespace {

template <class R>
using RowMat = Eigen::Matrix<R, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class R>
using ConstMap = Eigen::Map<const RowMat<R>>;
template <class R>
using MutMap = Eigen::Map<RowMat<R>>;
template <class R>
using ConstStrided = Eigen::Map<const RowMat<R>, 0, Eigen::OuterStride<>>;
template <class R>
using MutStrided = Eigen::Map<RowMat<R>, 0, Eigen::OuterStride<>>;

template <class R>
ConstMap<R> as_matrix(const Tensor<R>& t) {
  return ConstMap<R>(t.data(), static_cast<Eigen::Index>(t.shape()[0]), static_cast<Eigen::Index>(t.shape()[1]));
}
template <class R>
MutMap<R> as_matrix(Tensor<R>& t) {
  return MutMap<R>(t.data(), static_cast<Eigen::Index>(t.shape()[0]), static_cast<Eigen::Index>(t.shape()[1]));
}

void require_matrix(const char* op, const Shape& s) {
  if (s.size() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_to_string(s));
}

template <class R>
void require_same(const char* op, Var<R> a, Var<R> b) {
  if (a.shape() != b.shape()) throw ShapeError(op, a.shape(), b.shape());
}

template <class R>
void require_row_vector(const char* op, Var<R> m, Var<R> v) {
  require_matrix(op, m.shape());
  if (v.shape().size() != 1 || v.shape()[0] != m.shape()[1]) throw ShapeError(op, m.shape(), v.shape());
}

/// out(m×n) = a(m×k)·b(k×n) with each output row summed over k in ascending order, so a row's
/// result does not depend on how many other rows share the product.
template <class R>
void row_product(const R* a, std::size_t lda, const R* b, std::size_t ldb, R* out, std::size_t ldo, std::size_t m,
                 std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    R* o = out + i * ldo;
    const R* ai = a + i * lda;
    std::fill_n(o, n, R(0));
    for (std::size_t p = 0; p < k; ++p) {
      const R s = ai[p];
      const R* bp = b + p * ldb;
      for (std::size_t j = 0; j < n; ++j) o[j] += s * bp[j];
    }
  }
}

template <class R>
void add_into(Tensor<R>& dst, const Tensor<R>& src) {
  R* d = dst.data();
  const R* s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

}  // namespace

template <class R>
Var<R> matmul(Var<R> a, Var<R> b) {
  require_matrix("matmul", a.shape());
  require_matrix("matmul", b.shape());
  if (a.shape()[1] != b.shape()[0]) throw ShapeError("matmul", a.shape(), b.shape());
  Tensor<R> out({a.shape()[0], b.shape()[1]});
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  row_product(a.value().data(), k, b.value().data(), n, out.data(), n, m, k, n);
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [ia, ib](Tape<R>& t, std::size_t self) {
    const auto g = as_matrix(t.grad(self));
    if (t.requires_grad(ia)) as_matrix(t.grad(ia)).noalias() += g * as_matrix(t.value(ib)).transpose();
    if (t.requires_grad(ib)) as_matrix(t.grad(ib)).noalias() += as_matrix(t.value(ia)).transpose() * g;
  });
}

template <class R>
Var<R> add(Var<R> a, Var<R> b) {
  require_same("add", a, b);
  Tensor<R> out = a.value();
  add_into(out, b.value());
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [ia, ib](Tape<R>& t, std::size_t self) {
    const Tensor<R>& g = t.grad(self);
    if (t.requires_grad(ia)) add_into(t.grad(ia), g);
    if (t.requires_grad(ib)) add_into(t.grad(ib), g);
  });
}

template <class R>
Var<R> sub(Var<R> a, Var<R> b) {
  require_same("sub", a, b);
  Tensor<R> out = a.value();
  const Tensor<R>& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [ia, ib](Tape<R>& t, std::size_t self) {
    const Tensor<R>& g = t.grad(self);
    if (t.requires_grad(ia)) add_into(t.grad(ia), g);
    if (t.requires_grad(ib)) {
      Tensor<R>& gb = t.grad(ib);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <class R>
Var<R> mul(Var<R> a, Var<R> b) {
  require_same("mul", a, b);
  Tensor<R> out = a.value();
  const Tensor<R>& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [ia, ib](Tape<R>& t, std::size_t self) {
    const Tensor<R>& g = t.grad(self);
    const Tensor<R>& av = t.value(ia);
    const Tensor<R>& bv = t.value(ib);
    if (t.requires_grad(ia)) {
      Tensor<R>& ga = t.grad(ia);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(ib)) {
      Tensor<R>& gb = t.grad(ib);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <class R>
Var<R> scale(Var<R> a, R factor) {
  Tensor<R> out = a.value();
  for (R& v : out.values()) v *= factor;
  const std::size_t ia = a.id;
  return a.tape->record(std::move(out), {a}, [ia, factor](Tape<R>& t, std::size_t self) {
    const Tensor<R>& g = t.grad(self);
    Tensor<R>& ga = t.grad(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * factor;
  });
}

template <class R>
Var<R> add_row(Var<R> m, Var<R> v) {
  require_row_vector("add_row", m, v);
  const std::size_t n = m.shape()[0], d = m.shape()[1];
  Tensor<R> out = m.value();
  const R* vv = v.value().data();
  for (std::size_t i = 0; i < n; ++i) {
    R* row = out.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) row[j] += vv[j];
  }
  const std::size_t im = m.id, iv = v.id;
  return m.tape->record(std::move(out), {m, v}, [im, iv, n, d](Tape<R>& t, std::size_t self) {
    const Tensor<R>& g = t.grad(self);
    if (t.requires_grad(im)) add_into(t.grad(im), g);
    if (t.requires_grad(iv)) {
      R* gv = t.grad(iv).data();
      for (std::size_t i = 0; i < n; ++i) {
        const R* row = g.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) gv[j] += row[j];
      }
    }
  });
}

template <class R>
Var<R> mul_row(Var<R> m, Var<R> v) {
  require_row_vector("mul_row", m, v);
  const std::size_t n = m.shape()[0], d = m.shape()[1];
  Tensor<R> out = m.value();
  const R* vv = v.value().data();
  for (std::size_t i = 0; i < n; ++i) {
    R* row = out.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) row[j] *= vv[j];
  }
  const std::size_t im = m.id, iv = v.id;
  return m.tape->record(std::move(out), {m, v}, [im, iv, n, d](Tape<R>& t, std::size_t self) {
    const Tensor<R>& g = t.grad(self);
    const R* vv = t.value(iv).data();
    const R* mv = t.value(im).data();
    if (t.requires_grad(im)) {
      R* gm = t.grad(im).data();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) gm[i * d + j] += g[i * d + j] * vv[j];
      }
    }
    if (t.requires_grad(iv)) {
      R* gv = t.grad(iv).data();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) gv[j] += g[i * d + j] * mv[i * d + j];
      }
    }
  });
}

template <class R>
Var<R> relu(Var<R> a) {
  Tensor<R> out = a.value();
  for (R& v : out.values()) v = v > R(0) ? v : R(0);
  const std::size_t ia = a.id;
  return a.tape->record(std::move(out), {a}, [ia](Tape<R>& t, std::size_t self) {
    const Tensor<R>& g = t.grad(self);
    const Tensor<R>& x = t.value(ia);
    Tensor<R>& ga = t.grad(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) {
      if (x[i] > R(0)) ga[i] += g[i];
    }
  });
}

template <class R>
Var<R> gelu(Var<R> a) {
  constexpr R inv_sqrt2 = R(0.70710678118654752440);
  Tensor<R> out = a.value();
  for (R& v : out.values()) v = R(0.5) * v * (R(1) + std::erf(v * inv_sqrt2));
  const std::size_t ia = a.id;
  return a.tape->record(std::move(out), {a}, [ia](Tape<R>& t, std::size_t self) {
    constexpr R inv_sqrt2pi = R(0.39894228040143267794);
    const Tensor<R>& g = t.grad(self);
    const Tensor<R>& x = t.value(ia);
    Tensor<R>& ga = t.grad(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) {
      const R xi = x[i];
      const R cdf = R(0.5) * (R(1) + std::erf(xi * inv_sqrt2));
      const R pdf = inv_sqrt2pi * std::exp(R(-0.5) * xi * xi);
      ga[i] += g[i] * (cdf + xi * pdf);
    }
  });
}

template <class R>
Var<R> dropout(Var<R> a, double rate, const DropoutKey& key) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout: rate must lie in [0, 1)");
  if (rate == 0.0) return a;
  const std::uint64_t stream = key.stream();
  const R keep_scale = R(1.0 / (1.0 - rate));
  auto mask = std::make_shared<std::vector<R>>(a.value().size());
  Tensor<R> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = counter_uniform(stream, i) >= rate ? keep_scale : R(0);
    out[i] *= (*mask)[i];
  }
  const std::size_t ia = a.id;
  return a.tape->record(std::move(out), {a}, [ia, mask](Tape<R>& t, std::size_t self) {
    const Tensor<R>& g = t.grad(self);
    Tensor<R>& ga = t.grad(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * (*mask)[i];
  });
}

template <class R>
Var<R> layer_norm(Var<R> x, Var<R> gamma, Var<R> beta, R eps) {
  require_row_vector("layer_norm", x, gamma);
  require_row_vector("layer_norm", x, beta);
  const std::size_t n = x.shape()[0], d = x.shape()[1];
  auto xhat = std::make_shared<std::vector<R>>(n * d);
  auto inv_std = std::make_shared<std::vector<R>>(n);
  Tensor<R> out({n, d});
  const R* xv = x.value().data();
  const R* gv = gamma.value().data();
  const R* bv = beta.value().data();
  for (std::size_t i = 0; i < n; ++i) {
    const R* row = xv + i * d;
    R mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= R(d);
    R var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= R(d);
    const R inv = R(1) / std::sqrt(var + eps);
    (*inv_std)[i] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const R h = (row[j] - mu) * inv;
      (*xhat)[i * d + j] = h;
      out[i * d + j] = h * gv[j] + bv[j];
    }
  }
  const std::size_t ix = x.id, ig = gamma.id, ib = beta.id;
  return x.tape->record(std::move(out), {x, gamma, beta},
                        [ix, ig, ib, n, d, xhat, inv_std](Tape<R>& t, std::size_t self) {
    const Tensor<R>& g = t.grad(self);
    const R* gam = t.value(ig).data();
    if (t.requires_grad(ig)) {
      R* dg = t.grad(ig).data();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) dg[j] += g[i * d + j] * (*xhat)[i * d + j];
    }
    if (t.requires_grad(ib)) {
      R* db = t.grad(ib).data();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) db[j] += g[i * d + j];
    }
    if (t.requires_grad(ix)) {
      R* dx = t.grad(ix).data();
      for (std::size_t i = 0; i < n; ++i) {
        R sum_dh = 0, sum_dh_h = 0;
        for (std::size_t j = 0; j < d; ++j) {
          const R dh = g[i * d + j] * gam[j];
          sum_dh += dh;
          sum_dh_h += dh * (*xhat)[i * d + j];
        }
        const R inv = (*inv_std)[i];
        for (std::size_t j = 0; j < d; ++j) {
          const R dh = g[i * d + j] * gam[j];
          dx[i * d + j] += inv / R(d) * (R(d) * dh - sum_dh - (*xhat)[i * d + j] * sum_dh_h);
        }
      }
    }
  });
}

template <class R>
Var<R> softmax(Var<R> a, int axis) {
  require_matrix("softmax", a.shape());
  if (axis != 0 && axis != 1) throw std::invalid_argument("softmax: axis must be 0 or 1 for a matrix");
  const std::size_t n = a.shape()[0], d = a.shape()[1];
  // Each "line" is one row (axis 1) or one column (axis 0).
  const std::size_t lines = axis == 1 ? n : d, len = axis == 1 ? d : n;
  const std::size_t line_stride = axis == 1 ? d : 1, elem_stride = axis == 1 ? 1 : d;
  Tensor<R> out = a.value();
  for (std::size_t l = 0; l < lines; ++l) {
    R* base = out.data() + l * line_stride;
    R mx = -std::numeric_limits<R>::infinity();
    for (std::size_t e = 0; e < len; ++e) mx = std::max(mx, base[e * elem_stride]);
    R total = 0;
    for (std::size_t e = 0; e < len; ++e) {
      base[e * elem_stride] = std::exp(base[e * elem_stride] - mx);
      total += base[e * elem_stride];
    }
    for (std::size_t e = 0; e < len; ++e) base[e * elem_stride] /= total;
  }
  const std::size_t ia = a.id;
  return a.tape->record(std::move(out), {a},
                        [ia, lines, len, line_stride, elem_stride](Tape<R>& t, std::size_t self) {
    const Tensor<R>& g = t.grad(self);
    const Tensor<R>& y = t.value(self);
    Tensor<R>& ga = t.grad(ia);
    for (std::size_t l = 0; l < lines; ++l) {
      const std::size_t off = l * line_stride;
      R dot = 0;
      for (std::size_t e = 0; e < len; ++e) dot += g[off + e * elem_stride] * y[off + e * elem_stride];
      for (std::size_t e = 0; e < len; ++e) {
        const std::size_t p = off + e * elem_stride;
        ga[p] += y[p] * (g[p] - dot);
      }
    }
  });
}

template <class R>
Var<R> sum(Var<R> a) {
  R total = 0;
  for (R v : a.value().values()) total += v;
  const std::size_t ia = a.id;
  return a.tape->record(Tensor<R>::scalar(total), {a}, [ia](Tape<R>& t, std::size_t self) {
    const R g = t.grad(self)[0];
    for (R& v : t.grad(ia).values()) v += g;
  });
}

template <class R>
Var<R> mean(Var<R> a) {
  if (a.value().empty()) throw ShapeError("mean: empty tensor");
  return scale(sum(a), R(1) / R(a.value().size()));
}

template <class R>
Var<R> slice_rows(Var<R> a, std::size_t begin, std::size_t end) {
  require_matrix("slice_rows", a.shape());
  if (begin > end || end > a.shape()[0]) {
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") outside " + shape_to_string(a.shape()));
  }
  const std::size_t d = a.shape()[1];
  Tensor<R> out({end - begin, d});
  std::copy_n(a.value().data() + begin * d, (end - begin) * d, out.data());
  const std::size_t ia = a.id;
  return a.tape->record(std::move(out), {a}, [ia, begin, d](Tape<R>& t, std::size_t self) {
    const Tensor<R>& g = t.grad(self);
    R* ga = t.grad(ia).data() + begin * d;
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

template <class R>
Var<R> concat_rows(Var<R> a, Var<R> b) {
  require_matrix("concat_rows", a.shape());
  require_matrix("concat_rows", b.shape());
  if (a.shape()[1] != b.shape()[1]) throw ShapeError("concat_rows", a.shape(), b.shape());
  const std::size_t na = a.shape()[0], nb = b.shape()[0], d = a.shape()[1];
  Tensor<R> out({na + nb, d});
  std::copy_n(a.value().data(), na * d, out.data());
  std::copy_n(b.value().data(), nb * d, out.data() + na * d);
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [ia, ib, na, d](Tape<R>& t, std::size_t self) {
    const Tensor<R>& g = t.grad(self);
    if (t.requires_grad(ia)) {
      R* ga = t.grad(ia).data();
      for (std::size_t i = 0; i < na * d; ++i) ga[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      Tensor<R>& gb = t.grad(ib);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[na * d + i];
    }
  });
}

template <class R>
Var<R> select_row(Var<R> a, std::size_t k) {
  require_matrix("select_row", a.shape());
  if (k >= a.shape()[0]) {
    throw std::out_of_range("select_row: row " + std::to_string(k) + " of " + shape_to_string(a.shape()));
  }
  const std::size_t d = a.shape()[1];
  Tensor<R> out({d});
  std::copy_n(a.value().data() + k * d, d, out.data());
  const std::size_t ia = a.id;
  return a.tape->record(std::move(out), {a}, [ia, k, d](Tape<R>& t, std::size_t self) {
    const Tensor<R>& g = t.grad(self);
    R* ga = t.grad(ia).data() + k * d;
    for (std::size_t j = 0; j < d; ++j) ga[j] += g[j];
  });
}

template <class R>
Var<R> cross_entropy(Var<R> logits, std::span<const int> labels, std::size_t n_classes) {
  require_matrix("cross_entropy", logits.shape());
  const std::size_t n = logits.shape()[0], width = logits.shape()[1];
  if (labels.size() != n) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                     shape_to_string(logits.shape()));
  }
  if (n == 0) throw ShapeError("cross_entropy: no rows");
  if (n_classes == 0 || n_classes > width) {
    throw ShapeError("cross_entropy: class count " + std::to_string(n_classes) + " vs logits " +
                     shape_to_string(logits.shape()));
  }
  auto probs = std::make_shared<std::vector<R>>(n * n_classes);
  auto lab = std::make_shared<std::vector<int>>(labels.begin(), labels.end());
  const R* z = logits.value().data();
  R total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= n_classes) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(y) + " outside [0, " +
                              std::to_string(n_classes) + ")");
    }
    const R* row = z + i * width;
    R mx = row[0];
    for (std::size_t c = 1; c < n_classes; ++c) mx = std::max(mx, row[c]);
    R s = 0;
    for (std::size_t c = 0; c < n_classes; ++c) s += std::exp(row[c] - mx);
    const R log_norm = mx + std::log(s);
    for (std::size_t c = 0; c < n_classes; ++c) (*probs)[i * n_classes + c] = std::exp(row[c] - log_norm);
    total += log_norm - row[y];
  }
  const std::size_t il = logits.id;
  return logits.tape->record(Tensor<R>::scalar(total / R(n)), {logits},
                             [il, n, width, n_classes, probs, lab](Tape<R>& t, std::size_t self) {
    const R g = t.grad(self)[0] / R(n);
    R* gl = t.grad(il).data();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < n_classes; ++c) {
        const R target = static_cast<int>(c) == (*lab)[i] ? R(1) : R(0);
        gl[i * width + c] += g * ((*probs)[i * n_classes + c] - target);
      }
    }
  });
}

template <class R>
Var<R> periodic_embedding(Var<R> x, Var<R> freq) {
  require_matrix("periodic_embedding", x.shape());
  require_matrix("periodic_embedding", freq.shape());
  if (x.shape()[1] != freq.shape()[0]) throw ShapeError("periodic_embedding", x.shape(), freq.shape());
  constexpr R two_pi = R(2 * std::numbers::pi);
  const std::size_t n = x.shape()[0], d = x.shape()[1], f = freq.shape()[1];
  const std::size_t width = d * 2 * f;
  Tensor<R> out({n, width});
  const R* xv = x.value().data();
  const R* fv = freq.value().data();
  for (std::size_t i = 0; i < n; ++i) {
    R* row = out.data() + i * width;
    for (std::size_t j = 0; j < d; ++j) {
      const R xij = xv[i * d + j];
      for (std::size_t k = 0; k < f; ++k) {
        const R angle = two_pi * fv[j * f + k] * xij;
        row[j * 2 * f + k] = std::cos(angle);
        row[j * 2 * f + f + k] = std::sin(angle);
      }
    }
  }
  const std::size_t ix = x.id, ifr = freq.id;
  return x.tape->record(std::move(out), {x, freq}, [ix, ifr, n, d, f, width](Tape<R>& t, std::size_t self) {
    const Tensor<R>& g = t.grad(self);
    const R* xv = t.value(ix).data();
    const R* fv = t.value(ifr).data();
    const bool want_x = t.requires_grad(ix), want_f = t.requires_grad(ifr);
    R* gx = want_x ? t.grad(ix).data() : nullptr;
    R* gf = want_f ? t.grad(ifr).data() : nullptr;
    for (std::size_t i = 0; i < n; ++i) {
      const R* grow = g.data() + i * width;
      for (std::size_t j = 0; j < d; ++j) {
        const R xij = xv[i * d + j];
        for (std::size_t k = 0; k < f; ++k) {
          const R angle = two_pi * fv[j * f + k] * xij;
          // d/d(angle) of the cos and sin outputs, weighted by their adjoints.
          const R dangle = -std::sin(angle) * grow[j * 2 * f + k] + std::cos(angle) * grow[j * 2 * f + f + k];
          if (gf) gf[j * f + k] += dangle * two_pi * xij;
          if (gx) gx[i * d + j] += dangle * two_pi * fv[j * f + k];
        }
      }
    }
  });
}

template <class R>
Var<R> pfn_attention(Var<R> q, Var<R> k, Var<R> v, std::size_t n_support, std::size_t n_heads) {
  require_matrix("pfn_attention", q.shape());
  require_same("pfn_attention", q, k);
  require_same("pfn_attention", q, v);
  const std::size_t n = q.shape()[0], d = q.shape()[1];
  if (n_heads == 0 || d % n_heads != 0) {
    throw ShapeError("pfn_attention: width " + std::to_string(d) + " not divisible by " +
                     std::to_string(n_heads) + " heads");
  }
  if (n_support == 0 || n_support > n) {
    throw ShapeError("pfn_attention: support count " + std::to_string(n_support) + " for " +
                     std::to_string(n) + " tokens");
  }
  const std::size_t hd = d / n_heads, ns = n_support, nq = n - n_support;
  const R scale_factor = R(1) / std::sqrt(R(hd));
  const auto N = static_cast<Eigen::Index>(n), NS = static_cast<Eigen::Index>(ns),
             HD = static_cast<Eigen::Index>(hd);
  const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(d));

  // Per-head weights over support columns, and the self weight of each query row.
  auto probs = std::make_shared<std::vector<RowMat<R>>>(n_heads);
  auto self_probs = std::make_shared<std::vector<std::vector<R>>>(n_heads, std::vector<R>(nq));
  Tensor<R> out({n, d});
  for (std::size_t h = 0; h < n_heads; ++h) {
    ConstStrided<R> qh(q.value().data() + h * hd, N, HD, stride);
    ConstStrided<R> kh(k.value().data() + h * hd, N, HD, stride);
    ConstStrided<R> vh(v.value().data() + h * hd, N, HD, stride);
    RowMat<R>& p = (*probs)[h];
    const RowMat<R> kt = kh.topRows(NS).transpose();
    p.resize(N, NS);
    row_product(q.value().data() + h * hd, d, kt.data(), ns, p.data(), ns, n, hd, ns);
    std::vector<R>& ps = (*self_probs)[h];
    for (std::size_t i = 0; i < n; ++i) {
      R* row = p.data() + i * ns;
      R mx = -std::numeric_limits<R>::infinity();
      for (std::size_t j = 0; j < ns; ++j) {
        row[j] *= scale_factor;
        mx = std::max(mx, row[j]);
      }
      R self_score = 0;
      const bool is_query = i >= ns;
      if (is_query) {
        self_score = qh.row(static_cast<Eigen::Index>(i)).dot(kh.row(static_cast<Eigen::Index>(i))) * scale_factor;
        mx = std::max(mx, self_score);
      }
      R total = 0;
      for (std::size_t j = 0; j < ns; ++j) {
        row[j] = std::exp(row[j] - mx);
        total += row[j];
      }
      R self_w = 0;
      if (is_query) {
        self_w = std::exp(self_score - mx);
        total += self_w;
      }
      for (std::size_t j = 0; j < ns; ++j) row[j] /= total;
      if (is_query) ps[i - ns] = self_w / total;
    }
    MutStrided<R> oh(out.data() + h * hd, N, HD, stride);
    row_product(p.data(), ns, v.value().data() + h * hd, d, out.data() + h * hd, d, n, ns, hd);
    for (std::size_t i = ns; i < n; ++i) {
      oh.row(static_cast<Eigen::Index>(i)) += ps[i - ns] * vh.row(static_cast<Eigen::Index>(i));
    }
  }
  if (!q.tape->recording()) {
    return q.tape->record(std::move(out), {q, k, v}, {});
  }
  const std::size_t iq = q.id, ik = k.id, iv = v.id;
  return q.tape->record(std::move(out), {q, k, v},
                        [=](Tape<R>& t, std::size_t self) {
    const bool want_q = t.requires_grad(iq), want_k = t.requires_grad(ik), want_v = t.requires_grad(iv);
    const Tensor<R>& g = t.grad(self);
    for (std::size_t h = 0; h < n_heads; ++h) {
      ConstStrided<R> qh(t.value(iq).data() + h * hd, N, HD, stride);
      ConstStrided<R> kh(t.value(ik).data() + h * hd, N, HD, stride);
      ConstStrided<R> vh(t.value(iv).data() + h * hd, N, HD, stride);
      ConstStrided<R> gh(g.data() + h * hd, N, HD, stride);
      const RowMat<R>& p = (*probs)[h];
      const std::vector<R>& ps = (*self_probs)[h];

      if (want_v) {
        MutStrided<R> gvh(t.grad(iv).data() + h * hd, N, HD, stride);
        gvh.topRows(NS).noalias() += p.transpose() * gh;
        for (std::size_t i = ns; i < n; ++i) {
          gvh.row(static_cast<Eigen::Index>(i)) += ps[i - ns] * gh.row(static_cast<Eigen::Index>(i));
        }
      }
      if (!want_q && !want_k) continue;
      RowMat<R> ds = gh * vh.topRows(NS).transpose();  // dL/dP, overwritten with dL/dscore
      std::vector<R> dself(nq);
      for (std::size_t i = 0; i < n; ++i) {
        R* drow = ds.data() + i * ns;
        const R* prow = p.data() + i * ns;
        R dot = 0;
        for (std::size_t j = 0; j < ns; ++j) dot += prow[j] * drow[j];
        R dps = 0;
        if (i >= ns) {
          dps = gh.row(static_cast<Eigen::Index>(i)).dot(vh.row(static_cast<Eigen::Index>(i)));
          dot += ps[i - ns] * dps;
        }
        for (std::size_t j = 0; j < ns; ++j) drow[j] = prow[j] * (drow[j] - dot) * scale_factor;
        if (i >= ns) dself[i - ns] = ps[i - ns] * (dps - dot) * scale_factor;
      }
      if (want_q) {
        MutStrided<R> gqh(t.grad(iq).data() + h * hd, N, HD, stride);
        gqh.noalias() += ds * kh.topRows(NS);
        for (std::size_t i = ns; i < n; ++i) {
          gqh.row(static_cast<Eigen::Index>(i)) += dself[i - ns] * kh.row(static_cast<Eigen::Index>(i));
        }
      }
      if (want_k) {
        MutStrided<R> gkh(t.grad(ik).data() + h * hd, N, HD, stride);
        gkh.topRows(NS).noalias() += ds.transpose() * qh;
        for (std::size_t i = ns; i < n; ++i) {
          gkh.row(static_cast<Eigen::Index>(i)) += dself[i - ns] * qh.row(static_cast<Eigen::Index>(i));
        }
      }
    }
  });
}

#define BETA_INSTANTIATE_OPS(R)                                                                   \
  template Var<R> matmul<R>(Var<R>, Var<R>);                                                      \
  template Var<R> add<R>(Var<R>, Var<R>);                                                         \
  template Var<R> sub<R>(Var<R>, Var<R>);                                                         \
  template Var<R> mul<R>(Var<R>, Var<R>);                                                         \
  template Var<R> scale<R>(Var<R>, R);                                                            \
  template Var<R> add_row<R>(Var<R>, Var<R>);                                                     \
  template Var<R> mul_row<R>(Var<R>, Var<R>);                                                     \
  template Var<R> relu<R>(Var<R>);                                                                \
  template Var<R> gelu<R>(Var<R>);                                                                \
  template Var<R> dropout<R>(Var<R>, double, const DropoutKey&);                                  \
  template Var<R> layer_norm<R>(Var<R>, Var<R>, Var<R>, R);                                       \
  template Var<R> softmax<R>(Var<R>, int);                                                        \
  template Var<R> sum<R>(Var<R>);                                                                 \
  template Var<R> mean<R>(Var<R>);                                                                \
  template Var<R> slice_rows<R>(Var<R>, std::size_t, std::size_t);                                \
  template Var<R> concat_rows<R>(Var<R>, Var<R>);                                                 \
  template Var<R> select_row<R>(Var<R>, std::size_t);                                             \
  template Var<R> cross_entropy<R>(Var<R>, std::span<const int>, std::size_t);                    \
  template Var<R> periodic_embedding<R>(Var<R>, Var<R>);                                          \
  template Var<R> pfn_attention<R>(Var<R>, Var<R>, Var<R>, std::size_t, std::size_t);

BETA_INSTANTIATE_OPS(float)
BETA_INSTANTIATE_OPS(double)

}  // namespace beta
