// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <memory>

#include "emforge/ops.hpp"

namespace emforge {
namespace {

void validate_layout(const AttentionLayout& layout, std::size_t rows) {
  if (layout.key_mask.size() != rows) throw ShapeError("causal_attention: key_mask length differs from row count");
  std::size_t expected = 0;
  for (const auto& [offset, length] : layout.segments) {
    if (length == 0) throw ShapeError("causal_attention: empty segment");
    if (offset < expected || offset + length > rows) {
      throw ShapeError("causal_attention: segments must be ordered, disjoint and in range");
    }
    expected = offset + length;
  }
}

// Probabilities for one (segment, head) block are stored as a dense
// length x length lower-triangular matrix; masked keys hold zero.
template <class T>
struct AttentionSaved {
  std::vector<std::vector<T>> probs;  // indexed [segment * heads + head]
};

}  // namespace

Tensor causal_attention(const Tensor& qkv, const AttentionLayout& layout, std::size_t heads) {
  if (!qkv.defined() || qkv.rank() != 2) throw ShapeError("causal_attention: qkv must be 2-D");
  const std::size_t rows = qkv.dim(0);
  const std::size_t width = qkv.dim(1);
  if (heads == 0 || width % 3 != 0 || (width / 3) % heads != 0) {
    throw ShapeError("causal_attention: qkv width must be 3 * heads * head_dim");
  }
  validate_layout(layout, rows);
  const std::size_t d = width / 3;
  const std::size_t dh = d / heads;

  std::shared_ptr<void> saved;
  Tensor out = dispatch(qkv.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto src = qkv.data<T>();
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    std::vector<T> y(rows * d, T(0));
    auto keep = std::make_shared<AttentionSaved<T>>();
    keep->probs.resize(layout.segments.size() * heads);
    std::vector<T> scores;
    for (std::size_t s = 0; s < layout.segments.size(); ++s) {
      const auto [offset, len] = layout.segments[s];
      for (std::size_t h = 0; h < heads; ++h) {
        std::vector<T>& P = keep->probs[s * heads + h];
        P.assign(len * len, T(0));
        for (std::size_t i = 0; i < len; ++i) {
          const T* q = src.data() + (offset + i) * width + h * dh;
          scores.assign(i + 1, T(0));
          T mx = 0;
          bool any = false;
          for (std::size_t j = 0; j <= i; ++j) {
            if (!layout.key_mask[offset + j]) continue;
            const T* k = src.data() + (offset + j) * width + d + h * dh;
            T acc = 0;
            for (std::size_t t = 0; t < dh; ++t) acc += q[t] * k[t];
            scores[j] = acc * scale;
            mx = any ? std::max(mx, scores[j]) : scores[j];
            any = true;
          }
          if (!any) continue;
          T total = 0;
          for (std::size_t j = 0; j <= i; ++j) {
            if (!layout.key_mask[offset + j]) continue;
            const T e = std::exp(scores[j] - mx);
            P[i * len + j] = e;
            total += e;
          }
          T* o = y.data() + (offset + i) * d + h * dh;
          for (std::size_t j = 0; j <= i; ++j) {
            if (!layout.key_mask[offset + j]) continue;
            const T p = P[i * len + j] / total;
            P[i * len + j] = p;
            const T* v = src.data() + (offset + j) * width + 2 * d + h * dh;
            for (std::size_t t = 0; t < dh; ++t) o[t] += p * v[t];
          }
        }
      }
    }
    saved = keep;
    Tensor result = make_tensor<T>({rows, d}, std::move(y));
    check_finite(result, "causal_attention");
    return result;
  });
  if (!qkv.tracked()) return out;

  return record_op(out, {&qkv}, [qkv = qkv.detach(), layout, heads, saved, d, dh](const Tensor& g, const std::vector<bool>&) {
    Tensor gq = dispatch(g.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const auto& probs = static_cast<const AttentionSaved<T>*>(saved.get())->probs;
      auto src = qkv.data<T>();
      auto gs = g.data<T>();
      const std::size_t width = 3 * d;
      const std::size_t rows = qkv.dim(0);
      const T scale = T(1) / std::sqrt(static_cast<T>(dh));
      std::vector<T> acc(rows * width, T(0));
      std::vector<T> ds;
      for (std::size_t s = 0; s < layout.segments.size(); ++s) {
        const auto [offset, len] = layout.segments[s];
        for (std::size_t h = 0; h < heads; ++h) {
          const std::vector<T>& P = probs[s * heads + h];
          for (std::size_t i = 0; i < len; ++i) {
            const T* go = gs.data() + (offset + i) * d + h * dh;
            const T* q = src.data() + (offset + i) * width + h * dh;
            ds.assign(i + 1, T(0));
            T dot = 0;
            for (std::size_t j = 0; j <= i; ++j) {
              if (!layout.key_mask[offset + j]) continue;
              const T* v = src.data() + (offset + j) * width + 2 * d + h * dh;
              T dp = 0;
              for (std::size_t t = 0; t < dh; ++t) dp += go[t] * v[t];
              ds[j] = dp;
              dot += P[i * len + j] * dp;
            }
            T* dq = acc.data() + (offset + i) * width + h * dh;
            for (std::size_t j = 0; j <= i; ++j) {
              if (!layout.key_mask[offset + j]) continue;
              const T p = P[i * len + j];
              const T dsv = p * (ds[j] - dot) * scale;
              const T* k = src.data() + (offset + j) * width + d + h * dh;
              T* dk = acc.data() + (offset + j) * width + d + h * dh;
              T* dv = acc.data() + (offset + j) * width + 2 * d + h * dh;
              for (std::size_t t = 0; t < dh; ++t) {
                dq[t] += dsv * k[t];
                dk[t] += dsv * q[t];
                dv[t] += p * go[t];
              }
            }
          }
        }
      }
      return make_tensor<T>(qkv.shape(), std::move(acc));
    });
    return std::vector<Tensor>{gq};
  });
}

}  // namespace emforge
