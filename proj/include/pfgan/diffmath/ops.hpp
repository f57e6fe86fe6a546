#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "pfgan/diffmath/graph.hpp"

// Differentiable primitives. Every value is a rows x cols matrix; vectors are
// single rows. Backward closures capture node ids only.
namespace pfgan::ops {

namespace detail {

inline void require(bool ok, const char* op, const std::string& what) {
  if (!ok) throw ConfigError(std::string(op) + ": " + what);
}

inline std::string dims(const Tensor& t) {
  return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

}  // namespace detail

inline Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require(av.cols() == bv.rows(), "matmul",
                  "inner dimensions differ: " + detail::dims(av) + " * " + detail::dims(bv));
  Tensor out(av.rows(), bv.cols());
  out.map().noalias() = av.map() * bv.map();
  const auto ia = a.id(), ib = b.id();
  return a.graph()->make(std::move(out), {a, b}, "matmul", [ia, ib](Graph& g, std::size_t self) {
    const auto dc = g.out_grad(self).map();
    if (g.needs_grad(ia)) g.grad_ref(ia).map().noalias() += dc * g.value(ib).map().transpose();
    if (g.needs_grad(ib)) g.grad_ref(ib).map().noalias() += g.value(ia).map().transpose() * dc;
  });
}

// a + b, where b is either the same shape as a or a single row broadcast over
// the rows of a (bias).
inline Var add(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool broadcast = !av.same_shape(bv);
  if (broadcast) {
    detail::require(bv.rows() == 1 && bv.cols() == av.cols(), "add",
                    "cannot broadcast " + detail::dims(bv) + " onto " + detail::dims(av));
  }
  Tensor out = av;
  if (broadcast) {
    out.map().rowwise() += bv.map().row(0);
  } else {
    out.map() += bv.map();
  }
  const auto ia = a.id(), ib = b.id();
  return a.graph()->make(std::move(out), {a, b}, "add",
                         [ia, ib, broadcast](Graph& g, std::size_t self) {
                           const auto dc = g.out_grad(self).map();
                           if (g.needs_grad(ia)) g.grad_ref(ia).map() += dc;
                           if (g.needs_grad(ib)) {
                             if (broadcast) {
                               g.grad_ref(ib).map() += dc.colwise().sum();
                             } else {
                               g.grad_ref(ib).map() += dc;
                             }
                           }
                         });
}

inline Var sub(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require(av.same_shape(bv), "sub", detail::dims(av) + " vs " + detail::dims(bv));
  Tensor out = av;
  out.map() -= bv.map();
  const auto ia = a.id(), ib = b.id();
  return a.graph()->make(std::move(out), {a, b}, "sub", [ia, ib](Graph& g, std::size_t self) {
    const auto dc = g.out_grad(self).map();
    if (g.needs_grad(ia)) g.grad_ref(ia).map() += dc;
    if (g.needs_grad(ib)) g.grad_ref(ib).map() -= dc;
  });
}

// Elementwise product.
inline Var mul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require(av.same_shape(bv), "mul", detail::dims(av) + " vs " + detail::dims(bv));
  Tensor out = av;
  out.map().array() *= bv.map().array();
  const auto ia = a.id(), ib = b.id();
  return a.graph()->make(std::move(out), {a, b}, "mul", [ia, ib](Graph& g, std::size_t self) {
    const auto dc = g.out_grad(self).map().array();
    if (g.needs_grad(ia)) g.grad_ref(ia).map().array() += dc * g.value(ib).map().array();
    if (g.needs_grad(ib)) g.grad_ref(ib).map().array() += dc * g.value(ia).map().array();
  });
}

// scale * a + shift
inline Var affine(Var a, double scale, double shift) {
  Tensor out = a.value();
  for (auto& v : out.values()) v = scale * v + shift;
  const auto ia = a.id();
  return a.graph()->make(std::move(out), {a}, "affine", [ia, scale](Graph& g, std::size_t self) {
    g.grad_ref(ia).map() += scale * g.out_grad(self).map();
  });
}

inline Var scale(Var a, double s) { return affine(a, s, 0.0); }

// a / s for a 1x1 node s.
inline Var div_scalar(Var a, Var s) {
  detail::require(s.value().size() == 1, "div_scalar", "divisor must be 1x1");
  const double sv = s.item();
  Tensor out = a.value();
  for (auto& v : out.values()) v /= sv;
  const auto ia = a.id(), is = s.id();
  return a.graph()->make(std::move(out), {a, s}, "div_scalar", [ia, is](Graph& g, std::size_t self) {
    const double sv = g.value(is)[0];
    const auto& dc = g.out_grad(self);
    if (g.needs_grad(ia)) g.grad_ref(ia).map() += dc.map() / sv;
    if (g.needs_grad(is)) {
      const double dot = (dc.map().array() * g.value(ia).map().array()).sum();
      g.grad_ref(is)[0] -= dot / (sv * sv);
    }
  });
}

inline Var concat_cols(std::span<const Var> parts) {
  detail::require(!parts.empty(), "concat_cols", "no inputs");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    detail::require(p.rows() == rows, "concat_cols", "row counts differ");
    cols += p.cols();
  }
  Tensor out(rows, cols);
  std::vector<std::size_t> ids, offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& pv = p.value();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(pv.row_ptr(r), pv.row_ptr(r) + pv.cols(), out.row_ptr(r) + off);
    }
    ids.push_back(p.id());
    offsets.push_back(off);
    off += pv.cols();
  }
  return parts[0].graph()->make(
      std::move(out), parts, "concat_cols",
      [ids = std::move(ids), offsets = std::move(offsets)](Graph& g, std::size_t self) {
        const Tensor& dc = g.out_grad(self);
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (!g.needs_grad(ids[k])) continue;
          Tensor& gi = g.grad_ref(ids[k]);
          for (std::size_t r = 0; r < gi.rows(); ++r) {
            const double* src = dc.row_ptr(r) + offsets[k];
            double* dst = gi.row_ptr(r);
            for (std::size_t c = 0; c < gi.cols(); ++c) dst[c] += src[c];
          }
        }
      });
}

inline Var concat_cols(std::initializer_list<Var> parts) {
  return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

inline Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  const Tensor& av = a.value();
  detail::require(count > 0 && begin + count <= av.cols(), "slice_cols", "range out of bounds");
  Tensor out(av.rows(), count);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    std::copy(av.row_ptr(r) + begin, av.row_ptr(r) + begin + count, out.row_ptr(r));
  }
  const auto ia = a.id();
  return a.graph()->make(std::move(out), {a}, "slice_cols",
                         [ia, begin, count](Graph& g, std::size_t self) {
                           const Tensor& dc = g.out_grad(self);
                           Tensor& ga = g.grad_ref(ia);
                           for (std::size_t r = 0; r < dc.rows(); ++r) {
                             double* dst = ga.row_ptr(r) + begin;
                             const double* src = dc.row_ptr(r);
                             for (std::size_t c = 0; c < count; ++c) dst[c] += src[c];
                           }
                         });
}

inline Var concat_rows(std::span<const Var> parts) {
  detail::require(!parts.empty(), "concat_rows", "no inputs");
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    detail::require(p.cols() == cols, "concat_rows", "column counts differ");
    rows += p.rows();
  }
  Tensor out(rows, cols);
  std::vector<std::size_t> ids;
  std::size_t r0 = 0;
  for (const Var& p : parts) {
    const Tensor& pv = p.value();
    std::copy(pv.data(), pv.data() + pv.size(), out.row_ptr(r0));
    r0 += pv.rows();
    ids.push_back(p.id());
  }
  return parts[0].graph()->make(std::move(out), parts, "concat_rows",
                                [ids = std::move(ids)](Graph& g, std::size_t self) {
                                  const Tensor& dc = g.out_grad(self);
                                  std::size_t r0 = 0;
                                  for (auto id : ids) {
                                    const std::size_t n = g.value(id).size();
                                    if (g.needs_grad(id)) {
                                      double* dst = g.grad_ref(id).data();
                                      const double* src = dc.row_ptr(r0);
                                      for (std::size_t k = 0; k < n; ++k) dst[k] += src[k];
                                    }
                                    r0 += g.value(id).rows();
                                  }
                                });
}

inline Var concat_rows(std::initializer_list<Var> parts) {
  return concat_rows(std::span<const Var>(parts.begin(), parts.size()));
}

inline Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  const Tensor& av = a.value();
  detail::require(count > 0 && begin + count <= av.rows(), "slice_rows", "range out of bounds");
  Tensor out(count, av.cols());
  std::copy(av.row_ptr(begin), av.row_ptr(begin) + count * av.cols(), out.data());
  const auto ia = a.id();
  return a.graph()->make(std::move(out), {a}, "slice_rows",
                         [ia, begin](Graph& g, std::size_t self) {
                           const Tensor& dc = g.out_grad(self);
                           double* dst = g.grad_ref(ia).row_ptr(begin);
                           for (std::size_t k = 0; k < dc.size(); ++k) dst[k] += dc[k];
                         });
}

inline Var row(Var a, std::size_t r) { return slice_rows(a, r, 1); }

// Stacks row `r` of each node in `steps` into a steps.size() x cols matrix.
// Used to pull one sequence out of a batched unroll.
inline Var gather_row(std::span<const Var> steps, std::size_t r) {
  detail::require(!steps.empty(), "gather_row", "no inputs");
  const std::size_t cols = steps[0].cols();
  Tensor out(steps.size(), cols);
  std::vector<std::size_t> ids;
  ids.reserve(steps.size());
  for (std::size_t t = 0; t < steps.size(); ++t) {
    const Tensor& sv = steps[t].value();
    detail::require(sv.cols() == cols && r < sv.rows(), "gather_row", "row out of bounds");
    std::copy(sv.row_ptr(r), sv.row_ptr(r) + cols, out.row_ptr(t));
    ids.push_back(steps[t].id());
  }
  return steps[0].graph()->make(std::move(out), steps, "gather_row",
                                [ids = std::move(ids), r](Graph& g, std::size_t self) {
                                  const Tensor& dc = g.out_grad(self);
                                  for (std::size_t t = 0; t < ids.size(); ++t) {
                                    if (!g.needs_grad(ids[t])) continue;
                                    double* dst = g.grad_ref(ids[t]).row_ptr(r);
                                    const double* src = dc.row_ptr(t);
                                    for (std::size_t c = 0; c < dc.cols(); ++c) dst[c] += src[c];
                                  }
                                });
}

// out.row(k) = a.row(indices[k]); embedding lookup.
inline Var gather_rows(Var a, std::vector<std::size_t> indices) {
  const Tensor& av = a.value();
  detail::require(!indices.empty(), "gather_rows", "no indices");
  Tensor out(indices.size(), av.cols());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    detail::require(indices[k] < av.rows(), "gather_rows", "index out of range");
    std::copy(av.row_ptr(indices[k]), av.row_ptr(indices[k]) + av.cols(), out.row_ptr(k));
  }
  const auto ia = a.id();
  return a.graph()->make(std::move(out), {a}, "gather_rows",
                         [ia, indices = std::move(indices)](Graph& g, std::size_t self) {
                           const Tensor& dc = g.out_grad(self);
                           Tensor& ga = g.grad_ref(ia);
                           for (std::size_t k = 0; k < indices.size(); ++k) {
                             double* dst = ga.row_ptr(indices[k]);
                             const double* src = dc.row_ptr(k);
                             for (std::size_t c = 0; c < dc.cols(); ++c) dst[c] += src[c];
                           }
                         });
}

// Row k comes from a when take_a[k], else from b. Values are copied, so the
// result is bitwise equal to the chosen source rows.
inline Var select_rows(const std::vector<bool>& take_a, Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require(av.same_shape(bv) && take_a.size() == av.rows(), "select_rows", "shape mismatch");
  Tensor out(av.rows(), av.cols());
  for (std::size_t r = 0; r < av.rows(); ++r) {
    const double* src = take_a[r] ? av.row_ptr(r) : bv.row_ptr(r);
    std::copy(src, src + av.cols(), out.row_ptr(r));
  }
  const auto ia = a.id(), ib = b.id();
  return a.graph()->make(std::move(out), {a, b}, "select_rows",
                         [ia, ib, take_a](Graph& g, std::size_t self) {
                           const Tensor& dc = g.out_grad(self);
                           for (std::size_t r = 0; r < dc.rows(); ++r) {
                             const std::size_t target = take_a[r] ? ia : ib;
                             if (!g.needs_grad(target)) continue;
                             double* dst = g.grad_ref(target).row_ptr(r);
                             const double* src = dc.row_ptr(r);
                             for (std::size_t c = 0; c < dc.cols(); ++c) dst[c] += src[c];
                           }
                         });
}

inline Var transpose(Var a) {
  const Tensor& av = a.value();
  Tensor out(av.cols(), av.rows());
  out.map() = av.map().transpose();
  const auto ia = a.id();
  return a.graph()->make(std::move(out), {a}, "transpose", [ia](Graph& g, std::size_t self) {
    g.grad_ref(ia).map() += g.out_grad(self).map().transpose();
  });
}

inline Var tanh(Var a) {
  Tensor out = a.value();
  for (auto& v : out.values()) v = std::tanh(v);
  const auto ia = a.id();
  return a.graph()->make(std::move(out), {a}, "tanh", [ia](Graph& g, std::size_t self) {
    const auto y = g.value(self).map().array();
    g.grad_ref(ia).map().array() += g.out_grad(self).map().array() * (1.0 - y * y);
  });
}

inline Var sigmoid(Var a) {
  Tensor out = a.value();
  for (auto& v : out.values()) v = 1.0 / (1.0 + std::exp(-v));
  const auto ia = a.id();
  return a.graph()->make(std::move(out), {a}, "sigmoid", [ia](Graph& g, std::size_t self) {
    const auto y = g.value(self).map().array();
    g.grad_ref(ia).map().array() += g.out_grad(self).map().array() * y * (1.0 - y);
  });
}

// slope = 0 gives a plain ReLU.
inline Var leaky_relu(Var a, double slope) {
  Tensor out = a.value();
  for (auto& v : out.values()) v = v > 0.0 ? v : slope * v;
  const auto ia = a.id();
  return a.graph()->make(std::move(out), {a}, "leaky_relu", [ia, slope](Graph& g, std::size_t self) {
    const auto& x = g.value(ia).values();
    const auto& dc = g.out_grad(self).values();
    auto& ga = g.grad_ref(ia).values();
    for (std::size_t k = 0; k < x.size(); ++k) ga[k] += x[k] > 0.0 ? dc[k] : slope * dc[k];
  });
}

inline Var relu(Var a) { return leaky_relu(a, 0.0); }

// Multiplies by a caller-supplied mask (entries 0 or 1/keep_prob). The mask is
// an explicit input so repeated evaluations can share it.
inline Var dropout(Var a, const Tensor& mask) {
  detail::require(a.value().same_shape(mask), "dropout", "mask shape mismatch");
  Tensor out = a.value();
  out.map().array() *= mask.map().array();
  const auto ia = a.id();
  return a.graph()->make(std::move(out), {a}, "dropout", [ia, mask](Graph& g, std::size_t self) {
    g.grad_ref(ia).map().array() += g.out_grad(self).map().array() * mask.map().array();
  });
}

// Row-wise softmax. `allowed` (same size as a, row-major) marks entries that
// take part; excluded entries get weight exactly 0 and a row with no allowed
// entry is all zeros.
inline Var softmax_rows(Var a, const std::vector<std::uint8_t>* allowed = nullptr) {
  const Tensor& av = a.value();
  if (allowed) detail::require(allowed->size() == av.size(), "softmax_rows", "mask size mismatch");
  Tensor out(av.rows(), av.cols());
  const std::size_t cols = av.cols();
  for (std::size_t r = 0; r < av.rows(); ++r) {
    const double* x = av.row_ptr(r);
    double* y = out.row_ptr(r);
    auto ok = [&](std::size_t c) { return !allowed || (*allowed)[r * cols + c] != 0; };
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c)
      if (ok(c)) mx = std::max(mx, x[c]);
    if (!std::isfinite(mx)) continue;
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      y[c] = ok(c) ? std::exp(x[c] - mx) : 0.0;
      z += y[c];
    }
    for (std::size_t c = 0; c < cols; ++c) y[c] /= z;
  }
  const auto ia = a.id();
  return a.graph()->make(std::move(out), {a}, "softmax_rows", [ia](Graph& g, std::size_t self) {
    const Tensor& y = g.value(self);
    const Tensor& dc = g.out_grad(self);
    Tensor& ga = g.grad_ref(ia);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      const double* yr = y.row_ptr(r);
      const double* dr = dc.row_ptr(r);
      double dot = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) dot += yr[c] * dr[c];
      double* out = ga.row_ptr(r);
      for (std::size_t c = 0; c < y.cols(); ++c) out[c] += yr[c] * (dr[c] - dot);
    }
  });
}

// Lower-triangular mask: entry (t, j) allowed iff j <= t.
inline std::vector<std::uint8_t> causal_mask(std::size_t n) {
  std::vector<std::uint8_t> m(n * n, 0);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t j = 0; j <= t; ++j) m[t * n + j] = 1;
  return m;
}

inline Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const auto ia = a.id();
  return a.graph()->make(Tensor::scalar(s), {a}, "sum", [ia](Graph& g, std::size_t self) {
    const double d = g.out_grad(self)[0];
    for (auto& v : g.grad_ref(ia).values()) v += d;
  });
}

inline Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const auto ia = a.id();
  return a.graph()->make(Tensor::scalar(s / n), {a}, "mean", [ia, n](Graph& g, std::size_t self) {
    const double d = g.out_grad(self)[0] / n;
    for (auto& v : g.grad_ref(ia).values()) v += d;
  });
}

// Column means over rows: (T x C) -> (1 x C). Temporal mean-pool.
inline Var mean_rows(Var a) {
  const Tensor& av = a.value();
  const double n = static_cast<double>(av.rows());
  Tensor out(1, av.cols());
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = 0; c < av.cols(); ++c) out[c] += av(r, c);
  for (auto& v : out.values()) v /= n;
  const auto ia = a.id();
  return a.graph()->make(std::move(out), {a}, "mean_rows", [ia, n](Graph& g, std::size_t self) {
    const Tensor& dc = g.out_grad(self);
    Tensor& ga = g.grad_ref(ia);
    for (std::size_t r = 0; r < ga.rows(); ++r)
      for (std::size_t c = 0; c < ga.cols(); ++c) ga(r, c) += dc[c] / n;
  });
}

// Mean of (a - b)^2 over all entries.
inline Var mse(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (!av.same_shape(bv)) {
    throw InputError("mse: shape mismatch " + detail::dims(av) + " vs " + detail::dims(bv));
  }
  const double n = static_cast<double>(av.size());
  double s = 0.0;
  for (std::size_t k = 0; k < av.size(); ++k) {
    const double d = av[k] - bv[k];
    s += d * d;
  }
  const auto ia = a.id(), ib = b.id();
  return a.graph()->make(Tensor::scalar(s / n), {a, b}, "mse", [ia, ib, n](Graph& g, std::size_t self) {
    const double d = 2.0 * g.out_grad(self)[0] / n;
    const auto& x = g.value(ia).values();
    const auto& y = g.value(ib).values();
    if (g.needs_grad(ia)) {
      auto& ga = g.grad_ref(ia).values();
      for (std::size_t k = 0; k < x.size(); ++k) ga[k] += d * (x[k] - y[k]);
    }
    if (g.needs_grad(ib)) {
      auto& gb = g.grad_ref(ib).values();
      for (std::size_t k = 0; k < x.size(); ++k) gb[k] -= d * (x[k] - y[k]);
    }
  });
}

// Sum of 1x1 nodes; order of accumulation is the order given.
inline Var add_scalars(std::span<const Var> parts) {
  detail::require(!parts.empty(), "add_scalars", "no inputs");
  double s = 0.0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    detail::require(p.value().size() == 1, "add_scalars", "inputs must be 1x1");
    s += p.item();
    ids.push_back(p.id());
  }
  return parts[0].graph()->make(Tensor::scalar(s), parts, "add_scalars",
                                [ids = std::move(ids)](Graph& g, std::size_t self) {
                                  const double d = g.out_grad(self)[0];
                                  for (auto id : ids)
                                    if (g.needs_grad(id)) g.grad_ref(id)[0] += d;
                                });
}

}  // namespace pfgan::ops
