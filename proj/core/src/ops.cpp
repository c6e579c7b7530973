// SPDX-License-Identifier: Apache-2.0
#include "emforge/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

namespace emforge {
namespace {

void require_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dtype() != b.dtype()) {
    throw DTypeError(std::string(op) + ": dtype mismatch (" + to_string(a.dtype()) + " vs " + to_string(b.dtype()) + ")");
  }
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (!t.defined()) throw ShapeError(std::string(op) + ": undefined tensor");
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_to_string(t.shape()));
  }
}

template <class T>
Tensor finish(Shape shape, std::vector<T> values, const char* op) {
  Tensor out = make_tensor<T>(std::move(shape), std::move(values));
  check_finite(out, op);
  return out;
}

typedef float VecF32 __attribute__((vector_size(64)));
typedef double VecF64 __attribute__((vector_size(64)));
template <class T>
struct Lanes;
template <>
struct Lanes<float> {
  using type = VecF32;
  static constexpr std::size_t rows = 4;
};
template <>
struct Lanes<double> {
  using type = VecF64;
  static constexpr std::size_t rows = 8;
};

// Tiled over (rows x 2 vectors) of c and blocks of kDepth along p. Every
// c[i,j] remains one accumulator summed over p in ascending order (tiles
// along p resume from the stored partial sum), so tiling never changes a
// result bit relative to the naive triple loop.
template <class T>
void matmul_kernel(std::span<const T> a, std::span<const T> b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  using V = typename Lanes<T>::type;
  constexpr std::size_t kLanes = sizeof(V) / sizeof(T);
  constexpr std::size_t kRows = Lanes<T>::rows, kVecs = 2, kCols = kLanes * kVecs;
  constexpr std::size_t kDepth = 256;
  const T* ap = a.data();
  const T* bp = b.data();
  std::fill(c, c + m * n, T(0));
  for (std::size_t p0 = 0; p0 < k; p0 += kDepth) {
    const std::size_t p1 = std::min(k, p0 + kDepth);
    std::size_t i = 0;
    for (; i + kRows <= m; i += kRows) {
      std::size_t j = 0;
      for (; j + kCols <= n; j += kCols) {
        V acc[kRows][kVecs];
        for (std::size_t r = 0; r < kRows; ++r)
          for (std::size_t v = 0; v < kVecs; ++v) std::memcpy(&acc[r][v], c + (i + r) * n + j + v * kLanes, sizeof(V));
        for (std::size_t p = p0; p < p1; ++p) {
          V bv[kVecs];
          for (std::size_t v = 0; v < kVecs; ++v) std::memcpy(&bv[v], bp + p * n + j + v * kLanes, sizeof(V));
          for (std::size_t r = 0; r < kRows; ++r) {
            const T av = ap[(i + r) * k + p];
            for (std::size_t v = 0; v < kVecs; ++v) acc[r][v] += av * bv[v];
          }
        }
        for (std::size_t r = 0; r < kRows; ++r)
          for (std::size_t v = 0; v < kVecs; ++v) std::memcpy(c + (i + r) * n + j + v * kLanes, &acc[r][v], sizeof(V));
      }
      for (std::size_t r = 0; r < kRows; ++r) {
        T* crow = c + (i + r) * n;
        for (std::size_t p = p0; p < p1; ++p) {
          const T av = ap[(i + r) * k + p];
          for (std::size_t jj = j; jj < n; ++jj) crow[jj] += av * bp[p * n + jj];
        }
      }
    }
    for (; i < m; ++i) {
      T* crow = c + i * n;
      for (std::size_t p = p0; p < p1; ++p) {
        const T av = ap[i * k + p];
        for (std::size_t jj = 0; jj < n; ++jj) crow[jj] += av * bp[p * n + jj];
      }
    }
  }
}

// Splits `shape` around `axis` into (outer, n, inner).
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, int axis, const char* op) {
  const int rank = static_cast<int>(shape.size());
  const int ax = axis < 0 ? rank + axis : axis;
  if (ax < 0 || ax >= rank) throw ShapeError(std::string(op) + ": axis out of range");
  AxisSplit s;
  for (int i = 0; i < ax; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  s.n = shape[static_cast<std::size_t>(ax)];
  for (int i = ax + 1; i < rank; ++i) s.inner *= shape[static_cast<std::size_t>(i)];
  return s;
}

enum class Binary { add, sub, mul };

template <class T>
std::vector<T> binary_kernel(std::span<const T> a, std::span<const T> b, Binary kind) {
  std::vector<T> out(a.size());
  switch (kind) {
    case Binary::add:
      for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
      break;
    case Binary::sub:
      for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
      break;
    case Binary::mul:
      for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
      break;
  }
  return out;
}

Tensor binary(const Tensor& a, const Tensor& b, Binary kind, const char* op) {
  require_same_dtype(a, b, op);
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  }
  return dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    return finish<T>(a.shape(), binary_kernel<T>(a.data<T>(), b.data<T>(), kind), op);
  });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  require_same_dtype(a, b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner extents differ " + shape_to_string(a.shape()) + " x " + shape_to_string(b.shape()));
  }
  Tensor out = dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    std::vector<T> c(m * n);
    matmul_kernel<T>(a.data<T>(), b.data<T>(), c.data(), m, k, n);
    return finish<T>({m, n}, std::move(c), "matmul");
  });
  if (!a.tracked() && !b.tracked()) return out;
  return record_op(out, {&a, &b}, [a = a.detach(), b = b.detach()](const Tensor& g, const std::vector<bool>& needs) {
    std::vector<Tensor> grads(2);
    if (needs[0]) grads[0] = matmul(g, transpose(b));
    if (needs[1]) grads[1] = matmul(transpose(a), g);
    return grads;
  });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor out = dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto src = a.data<T>();
    std::vector<T> dst(m * n);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) dst[j * m + i] = src[i * n + j];
    return make_tensor<T>({n, m}, std::move(dst));
  });
  if (!a.tracked()) return out;
  return record_op(out, {&a}, [](const Tensor& g, const std::vector<bool>&) { return std::vector<Tensor>{transpose(g)}; });
}

Tensor add(const Tensor& a, const Tensor& b) {
  Tensor out = binary(a, b, Binary::add, "add");
  if (!a.tracked() && !b.tracked()) return out;
  return record_op(out, {&a, &b}, [](const Tensor& g, const std::vector<bool>&) { return std::vector<Tensor>{g, g}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Tensor out = binary(a, b, Binary::sub, "sub");
  if (!a.tracked() && !b.tracked()) return out;
  return record_op(out, {&a, &b}, [](const Tensor& g, const std::vector<bool>& needs) {
    std::vector<Tensor> grads(2);
    grads[0] = g;
    if (needs[1]) grads[1] = scale(g, -1.0);
    return grads;
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Tensor out = binary(a, b, Binary::mul, "mul");
  if (!a.tracked() && !b.tracked()) return out;
  return record_op(out, {&a, &b}, [a = a.detach(), b = b.detach()](const Tensor& g, const std::vector<bool>& needs) {
    std::vector<Tensor> grads(2);
    if (needs[0]) grads[0] = mul(g, b);
    if (needs[1]) grads[1] = mul(g, a);
    return grads;
  });
}

Tensor scale(const Tensor& a, double factor) {
  Tensor out = dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto src = a.data<T>();
    const T f = static_cast<T>(factor);
    std::vector<T> dst(src.size());
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] * f;
    return finish<T>(a.shape(), std::move(dst), "scale");
  });
  if (!a.tracked()) return out;
  return record_op(out, {&a}, [factor](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{scale(g, factor)};
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_rank(x, 2, "add_bias");
  require_rank(bias, 1, "add_bias");
  require_same_dtype(x, bias, "add_bias");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (bias.dim(0) != d) throw ShapeError("add_bias: bias length differs from row width");
  Tensor out = dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xs = x.data<T>();
    auto bs = bias.data<T>();
    std::vector<T> dst(n * d);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) dst[i * d + j] = xs[i * d + j] + bs[j];
    return finish<T>(x.shape(), std::move(dst), "add_bias");
  });
  if (!x.tracked() && !bias.tracked()) return out;
  return record_op(out, {&x, &bias}, [n, d](const Tensor& g, const std::vector<bool>& needs) {
    std::vector<Tensor> grads(2);
    grads[0] = g;
    if (needs[1]) {
      grads[1] = dispatch(g.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto gs = g.data<T>();
        std::vector<T> gb(d, T(0));
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j) gb[j] += gs[i * d + j];
        return make_tensor<T>({d}, std::move(gb));
      });
    }
    return grads;
  });
}

Tensor gelu(const Tensor& x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2 / pi)
  constexpr double kA = 0.044715;
  Tensor out = dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xs = x.data<T>();
    std::vector<T> y(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const T v = xs[i];
      const T t = std::tanh(T(kC) * (v + T(kA) * v * v * v));
      y[i] = T(0.5) * v * (T(1) + t);
    }
    return finish<T>(x.shape(), std::move(y), "gelu");
  });
  if (!x.tracked()) return out;
  return record_op(out, {&x}, [x = x.detach()](const Tensor& g, const std::vector<bool>&) {
    Tensor gx = dispatch(x.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto xs = x.data<T>();
      auto gs = g.data<T>();
      std::vector<T> d(xs.size());
      for (std::size_t i = 0; i < xs.size(); ++i) {
        const T v = xs[i];
        const T t = std::tanh(T(kC) * (v + T(kA) * v * v * v));
        const T dt = (T(1) - t * t) * T(kC) * (T(1) + T(3 * kA) * v * v);
        d[i] = gs[i] * (T(0.5) * (T(1) + t) + T(0.5) * v * dt);
      }
      return make_tensor<T>(x.shape(), std::move(d));
    });
    return std::vector<Tensor>{gx};
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (!x.defined() || x.rank() < 1) throw ShapeError("layer_norm: input must have rank >= 1");
  require_rank(gamma, 1, "layer_norm");
  require_rank(beta, 1, "layer_norm");
  require_same_dtype(x, gamma, "layer_norm");
  require_same_dtype(x, beta, "layer_norm");
  if (!(eps > 0)) throw NumericError("layer_norm: eps must be positive");
  const std::size_t d = x.shape().back();
  if (gamma.dim(0) != d || beta.dim(0) != d) {
    throw ShapeError("layer_norm: gamma/beta length " + std::to_string(gamma.dim(0)) + "/" + std::to_string(beta.dim(0)) +
                     " differs from feature width " + std::to_string(d));
  }
  const std::size_t rows = x.numel() / d;

  Tensor xhat, rstd;
  Tensor out = dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xs = x.data<T>();
    auto gs = gamma.data<T>();
    auto bs = beta.data<T>();
    std::vector<T> y(xs.size()), xh(xs.size()), rs(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* row = xs.data() + r * d;
      T mu = 0;
      for (std::size_t j = 0; j < d; ++j) mu += row[j];
      mu /= static_cast<T>(d);
      T var = 0;
      for (std::size_t j = 0; j < d; ++j) {
        const T c = row[j] - mu;
        var += c * c;
      }
      var /= static_cast<T>(d);
      const T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
      rs[r] = inv;
      for (std::size_t j = 0; j < d; ++j) {
        const T h = (row[j] - mu) * inv;
        xh[r * d + j] = h;
        y[r * d + j] = h * gs[j] + bs[j];
      }
    }
    xhat = make_tensor<T>(x.shape(), std::move(xh));
    rstd = make_tensor<T>({rows}, std::move(rs));
    return finish<T>(x.shape(), std::move(y), "layer_norm");
  });
  if (!x.tracked() && !gamma.tracked() && !beta.tracked()) return out;
  return record_op(out, {&x, &gamma, &beta},
                   [xhat, rstd, gamma = gamma.detach(), rows, d](const Tensor& g, const std::vector<bool>& needs) {
    std::vector<Tensor> grads(3);
    dispatch(g.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto gs = g.data<T>();
      auto xh = xhat.data<T>();
      auto rs = rstd.data<T>();
      auto gm = gamma.data<T>();
      if (needs[0]) {
        std::vector<T> gx(gs.size());
        for (std::size_t r = 0; r < rows; ++r) {
          T mean_dh = 0, mean_dh_xh = 0;
          for (std::size_t j = 0; j < d; ++j) {
            const T dh = gs[r * d + j] * gm[j];
            mean_dh += dh;
            mean_dh_xh += dh * xh[r * d + j];
          }
          mean_dh /= static_cast<T>(d);
          mean_dh_xh /= static_cast<T>(d);
          for (std::size_t j = 0; j < d; ++j) {
            const T dh = gs[r * d + j] * gm[j];
            gx[r * d + j] = rs[r] * (dh - mean_dh - xh[r * d + j] * mean_dh_xh);
          }
        }
        grads[0] = make_tensor<T>(g.shape(), std::move(gx));
      }
      if (needs[1] || needs[2]) {
        std::vector<T> gg(d, T(0)), gb(d, T(0));
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < d; ++j) {
            gg[j] += gs[r * d + j] * xh[r * d + j];
            gb[j] += gs[r * d + j];
          }
        if (needs[1]) grads[1] = make_tensor<T>({d}, std::move(gg));
        if (needs[2]) grads[2] = make_tensor<T>({d}, std::move(gb));
      }
    });
    return grads;
  });
}

namespace {

template <class T>
std::vector<T> softmax_kernel(std::span<const T> xs, const AxisSplit& s, bool log_space) {
  std::vector<T> y(xs.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      T mx = xs[base];
      for (std::size_t k = 1; k < s.n; ++k) mx = std::max(mx, xs[base + k * s.inner]);
      T total = 0;
      for (std::size_t k = 0; k < s.n; ++k) total += std::exp(xs[base + k * s.inner] - mx);
      if (log_space) {
        const T lse = std::log(total);
        for (std::size_t k = 0; k < s.n; ++k) y[base + k * s.inner] = (xs[base + k * s.inner] - mx) - lse;
      } else {
        for (std::size_t k = 0; k < s.n; ++k) y[base + k * s.inner] = std::exp(xs[base + k * s.inner] - mx) / total;
      }
    }
  }
  return y;
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) {
  if (!x.defined() || x.rank() == 0) throw ShapeError("softmax: empty axis");
  const AxisSplit s = split_axis(x.shape(), axis, "softmax");
  Tensor out = dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    return finish<T>(x.shape(), softmax_kernel<T>(x.data<T>(), s, false), "softmax");
  });
  if (!x.tracked()) return out;
  return record_op(out, {&x}, [y = out.detach(), s](const Tensor& g, const std::vector<bool>&) {
    Tensor gx = dispatch(g.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto ys = y.data<T>();
      auto gs = g.data<T>();
      std::vector<T> d(ys.size());
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t in = 0; in < s.inner; ++in) {
          const std::size_t base = o * s.n * s.inner + in;
          T dot = 0;
          for (std::size_t k = 0; k < s.n; ++k) dot += gs[base + k * s.inner] * ys[base + k * s.inner];
          for (std::size_t k = 0; k < s.n; ++k) {
            const std::size_t idx = base + k * s.inner;
            d[idx] = ys[idx] * (gs[idx] - dot);
          }
        }
      return make_tensor<T>(y.shape(), std::move(d));
    });
    return std::vector<Tensor>{gx};
  });
}

Tensor log_softmax(const Tensor& x, int axis) {
  if (!x.defined() || x.rank() == 0) throw ShapeError("log_softmax: empty axis");
  const AxisSplit s = split_axis(x.shape(), axis, "log_softmax");
  Tensor out = dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    return finish<T>(x.shape(), softmax_kernel<T>(x.data<T>(), s, true), "log_softmax");
  });
  if (!x.tracked()) return out;
  return record_op(out, {&x}, [y = out.detach(), s](const Tensor& g, const std::vector<bool>&) {
    Tensor gx = dispatch(g.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto ys = y.data<T>();
      auto gs = g.data<T>();
      std::vector<T> d(ys.size());
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t in = 0; in < s.inner; ++in) {
          const std::size_t base = o * s.n * s.inner + in;
          T total = 0;
          for (std::size_t k = 0; k < s.n; ++k) total += gs[base + k * s.inner];
          for (std::size_t k = 0; k < s.n; ++k) {
            const std::size_t idx = base + k * s.inner;
            d[idx] = gs[idx] - std::exp(ys[idx]) * total;
          }
        }
      return make_tensor<T>(y.shape(), std::move(d));
    });
    return std::vector<Tensor>{gx};
  });
}

Tensor sum(const Tensor& x) {
  if (!x.defined()) throw ShapeError("sum: undefined tensor");
  Tensor out = dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    T total = 0;
    for (T v : x.data<T>()) total += v;
    return finish<T>({1}, std::vector<T>{total}, "sum");
  });
  if (!x.tracked()) return out;
  return record_op(out, {&x}, [shape = x.shape()](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{Tensor::full(shape, g.item(), g.dtype())};
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor reshape(const Tensor& x, Shape shape) {
  Tensor out = x.detach().reshaped(std::move(shape));
  if (!x.tracked()) return out;
  return record_op(out, {&x}, [orig = x.shape()](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{g.reshaped(orig)};
  });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> rows) {
  require_rank(table, 2, "gather_rows");
  if (rows.empty()) throw ShapeError("gather_rows: empty index list");
  const std::size_t n = table.dim(0), d = table.dim(1);
  for (auto r : rows) {
    if (r >= n) throw ShapeError("gather_rows: row " + std::to_string(r) + " out of range " + std::to_string(n));
  }
  Tensor out = dispatch(table.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto src = table.data<T>();
    std::vector<T> dst(rows.size() * d);
    for (std::size_t i = 0; i < rows.size(); ++i)
      std::copy_n(src.data() + rows[i] * d, d, dst.data() + i * d);
    return make_tensor<T>({rows.size(), d}, std::move(dst));
  });
  if (!table.tracked()) return out;
  return record_op(out, {&table}, [idx = std::vector<std::size_t>(rows.begin(), rows.end()), n, d](
                                      const Tensor& g, const std::vector<bool>&) {
    Tensor gt = dispatch(g.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto gs = g.data<T>();
      std::vector<T> acc(n * d, T(0));
      for (std::size_t i = 0; i < idx.size(); ++i) {
        T* dst = acc.data() + idx[i] * d;
        const T* src = gs.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
      }
      return make_tensor<T>({n, d}, std::move(acc));
    });
    return std::vector<Tensor>{gt};
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t d = parts[0].rank() == 2 ? parts[0].dim(1) : 0;
  std::size_t rows = 0;
  std::vector<std::size_t> counts;
  for (const Tensor& p : parts) {
    require_rank(p, 2, "concat_rows");
    require_same_dtype(p, parts[0], "concat_rows");
    if (p.dim(1) != d) throw ShapeError("concat_rows: row widths differ");
    counts.push_back(p.dim(0));
    rows += p.dim(0);
  }
  Tensor out = dispatch(parts[0].dtype(), [&](auto tag) {
    using T = decltype(tag);
    std::vector<T> dst;
    dst.reserve(rows * d);
    for (const Tensor& p : parts) {
      auto src = p.data<T>();
      dst.insert(dst.end(), src.begin(), src.end());
    }
    return make_tensor<T>({rows, d}, std::move(dst));
  });
  std::vector<const Tensor*> inputs;
  bool any = false;
  for (const Tensor& p : parts) {
    inputs.push_back(&p);
    any = any || p.tracked();
  }
  if (!any) return out;
  return record_op(out, inputs, [counts](const Tensor& g, const std::vector<bool>& needs) {
    std::vector<Tensor> grads(counts.size());
    std::size_t offset = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
      if (needs[i]) grads[i] = slice_rows(g, offset, counts[i]);
      offset += counts[i];
    }
    return grads;
  });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  if (!x.defined() || x.rank() < 1) throw ShapeError("slice_rows: rank >= 1 required");
  if (count == 0 || begin + count > x.dim(0)) throw ShapeError("slice_rows: range out of bounds");
  Shape shape = x.shape();
  const std::size_t width = x.numel() / shape[0];
  shape[0] = count;
  Tensor out = dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto src = x.data<T>();
    std::vector<T> dst(src.begin() + static_cast<std::ptrdiff_t>(begin * width),
                       src.begin() + static_cast<std::ptrdiff_t>((begin + count) * width));
    return make_tensor<T>(shape, std::move(dst));
  });
  if (!x.tracked()) return out;
  return record_op(out, {&x}, [full = x.shape(), begin, width](const Tensor& g, const std::vector<bool>&) {
    Tensor gx = dispatch(g.dtype(), [&](auto tag) {
      using T = decltype(tag);
      std::vector<T> acc(shape_numel(full), T(0));
      auto gs = g.data<T>();
      std::copy(gs.begin(), gs.end(), acc.begin() + static_cast<std::ptrdiff_t>(begin * width));
      return make_tensor<T>(full, std::move(acc));
    });
    return std::vector<Tensor>{gx};
  });
}

Tensor l2_normalize_rows(const Tensor& x) {
  require_rank(x, 2, "l2_normalize_rows");
  const std::size_t n = x.dim(0), d = x.dim(1);
  Tensor norms;
  Tensor out = dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xs = x.data<T>();
    std::vector<T> y(xs.size()), ns(n);
    for (std::size_t i = 0; i < n; ++i) {
      T ss = 0;
      for (std::size_t j = 0; j < d; ++j) ss += xs[i * d + j] * xs[i * d + j];
      const T norm = std::sqrt(ss);
      if (!(norm > T(0))) throw NumericError("l2_normalize_rows: zero vector in row " + std::to_string(i));
      ns[i] = norm;
      for (std::size_t j = 0; j < d; ++j) y[i * d + j] = xs[i * d + j] / norm;
    }
    norms = make_tensor<T>({n}, std::move(ns));
    return finish<T>(x.shape(), std::move(y), "l2_normalize_rows");
  });
  if (!x.tracked()) return out;
  return record_op(out, {&x}, [y = out.detach(), norms, n, d](const Tensor& g, const std::vector<bool>&) {
    Tensor gx = dispatch(g.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto ys = y.data<T>();
      auto gs = g.data<T>();
      auto ns = norms.data<T>();
      std::vector<T> dx(ys.size());
      for (std::size_t i = 0; i < n; ++i) {
        T dot = 0;
        for (std::size_t j = 0; j < d; ++j) dot += gs[i * d + j] * ys[i * d + j];
        for (std::size_t j = 0; j < d; ++j) dx[i * d + j] = (gs[i * d + j] - ys[i * d + j] * dot) / ns[i];
      }
      return make_tensor<T>(y.shape(), std::move(dx));
    });
    return std::vector<Tensor>{gx};
  });
}

Tensor pick(const Tensor& x, std::span<const std::size_t> cols) {
  require_rank(x, 2, "pick");
  const std::size_t n = x.dim(0), m = x.dim(1);
  if (cols.size() != n) throw ShapeError("pick: one column index per row required");
  for (auto c : cols) {
    if (c >= m) throw ShapeError("pick: column index out of range");
  }
  Tensor out = dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xs = x.data<T>();
    std::vector<T> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = xs[i * m + cols[i]];
    return make_tensor<T>({n}, std::move(y));
  });
  if (!x.tracked()) return out;
  return record_op(out, {&x}, [idx = std::vector<std::size_t>(cols.begin(), cols.end()), n, m](
                                  const Tensor& g, const std::vector<bool>&) {
    Tensor gx = dispatch(g.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto gs = g.data<T>();
      std::vector<T> acc(n * m, T(0));
      for (std::size_t i = 0; i < n; ++i) acc[i * m + idx[i]] = gs[i];
      return make_tensor<T>({n, m}, std::move(acc));
    });
    return std::vector<Tensor>{gx};
  });
}

Tensor group_dot(const Tensor& a, const Tensor& b, std::size_t group) {
  require_rank(a, 2, "group_dot");
  require_rank(b, 2, "group_dot");
  require_same_dtype(a, b, "group_dot");
  const std::size_t n = a.dim(0), d = a.dim(1);
  if (group == 0 || b.dim(0) != n * group || b.dim(1) != d) {
    throw ShapeError("group_dot: expected b of shape [" + std::to_string(n * group) + "x" + std::to_string(d) + "], got " +
                     shape_to_string(b.shape()));
  }
  Tensor out = dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto as = a.data<T>();
    auto bs = b.data<T>();
    std::vector<T> y(n * group);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < group; ++k) {
        T acc = 0;
        const T* brow = bs.data() + (i * group + k) * d;
        for (std::size_t j = 0; j < d; ++j) acc += as[i * d + j] * brow[j];
        y[i * group + k] = acc;
      }
    return finish<T>({n, group}, std::move(y), "group_dot");
  });
  if (!a.tracked() && !b.tracked()) return out;
  return record_op(out, {&a, &b}, [a = a.detach(), b = b.detach(), n, d, group](const Tensor& g, const std::vector<bool>& needs) {
    std::vector<Tensor> grads(2);
    dispatch(g.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto as = a.data<T>();
      auto bs = b.data<T>();
      auto gs = g.data<T>();
      if (needs[0]) {
        std::vector<T> ga(n * d, T(0));
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t k = 0; k < group; ++k) {
            const T gv = gs[i * group + k];
            const T* brow = bs.data() + (i * group + k) * d;
            for (std::size_t j = 0; j < d; ++j) ga[i * d + j] += gv * brow[j];
          }
        grads[0] = make_tensor<T>({n, d}, std::move(ga));
      }
      if (needs[1]) {
        std::vector<T> gb(n * group * d);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t k = 0; k < group; ++k) {
            const T gv = gs[i * group + k];
            T* dst = gb.data() + (i * group + k) * d;
            for (std::size_t j = 0; j < d; ++j) dst[j] = gv * as[i * d + j];
          }
        grads[1] = make_tensor<T>({n * group, d}, std::move(gb));
      }
    });
    return grads;
  });
}

Tensor concat_cols(const Tensor& left, const Tensor& right) {
  require_rank(left, 2, "concat_cols");
  require_rank(right, 2, "concat_cols");
  require_same_dtype(left, right, "concat_cols");
  const std::size_t n = left.dim(0), a = left.dim(1), b = right.dim(1);
  if (right.dim(0) != n) throw ShapeError("concat_cols: row counts differ");
  Tensor out = dispatch(left.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto ls = left.data<T>();
    auto rs = right.data<T>();
    std::vector<T> y;
    y.reserve(n * (a + b));
    for (std::size_t i = 0; i < n; ++i) {
      y.insert(y.end(), ls.begin() + static_cast<std::ptrdiff_t>(i * a), ls.begin() + static_cast<std::ptrdiff_t>((i + 1) * a));
      y.insert(y.end(), rs.begin() + static_cast<std::ptrdiff_t>(i * b), rs.begin() + static_cast<std::ptrdiff_t>((i + 1) * b));
    }
    return make_tensor<T>({n, a + b}, std::move(y));
  });
  if (!left.tracked() && !right.tracked()) return out;
  return record_op(out, {&left, &right}, [a, b](const Tensor& g, const std::vector<bool>& needs) {
    std::vector<Tensor> grads(2);
    if (needs[0]) grads[0] = slice_cols(g, 0, a);
    if (needs[1]) grads[1] = slice_cols(g, a, b);
    return grads;
  });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
  require_rank(x, 2, "slice_cols");
  const std::size_t n = x.dim(0), m = x.dim(1);
  if (count == 0 || begin + count > m) throw ShapeError("slice_cols: range out of bounds");
  Tensor out = dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xs = x.data<T>();
    std::vector<T> y;
    y.reserve(n * count);
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = xs.begin() + static_cast<std::ptrdiff_t>(i * m + begin);
      y.insert(y.end(), row, row + static_cast<std::ptrdiff_t>(count));
    }
    return make_tensor<T>({n, count}, std::move(y));
  });
  if (!x.tracked()) return out;
  return record_op(out, {&x}, [n, m, begin, count](const Tensor& g, const std::vector<bool>&) {
    Tensor gx = dispatch(g.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto gs = g.data<T>();
      std::vector<T> acc(n * m, T(0));
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < count; ++j) acc[i * m + begin + j] = gs[i * count + j];
      return make_tensor<T>({n, m}, std::move(acc));
    });
    return std::vector<Tensor>{gx};
  });
}

}  // namespace emforge
