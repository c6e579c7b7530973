// SPDX-License-Identifier: Apache-2.0
#include "emforge/contrastive.hpp"

#include <cmath>
#include <numeric>
#include <spdlog/spdlog.h>

#include "emforge/ops.hpp"

namespace emforge {
namespace {

void require_tau(double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("temperature must be positive, got " + std::to_string(tau));
}

double norm_of(const std::vector<double>& v) {
  double ss = 0.0;
  for (double x : v) ss += x * x;
  return std::sqrt(ss);
}

}  // namespace

double log_similarity(const EmbeddingVector& q, const EmbeddingVector& t, double tau) {
  require_tau(tau);
  const auto a = q.values.to_vector();
  const auto b = t.values.to_vector();
  if (a.size() != b.size()) throw ShapeError("similarity: dimension mismatch");
  const double na = norm_of(a), nb = norm_of(b);
  if (na == 0.0 || nb == 0.0) throw NumericError("similarity: zero vector");
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
  return dot / (na * nb) / tau;
}

double similarity(const EmbeddingVector& q, const EmbeddingVector& t, double tau) {
  return std::exp(log_similarity(q, t, tau));
}

void TrainBatch::validate() const {
  require_tau(temperature);
  if (!queries.defined() || !targets.defined()) throw ShapeError("train batch: missing embeddings");
  if (queries.rank() != 2 || targets.shape() != queries.shape()) {
    throw ShapeError("train batch: queries " + shape_to_string(queries.shape()) + " vs targets " +
                     shape_to_string(targets.shape()));
  }
  if (negatives_per_query > 0) {
    const Shape want{queries.dim(0) * negatives_per_query, queries.dim(1)};
    if (!hard_negatives.defined() || hard_negatives.shape() != want) {
      throw ShapeError("train batch: hard negatives must be " + shape_to_string(want));
    }
  } else if (hard_negatives.defined()) {
    throw ShapeError("train batch: hard negatives given with negatives_per_query = 0");
  }
}

Tensor build_score_matrix(const Tensor& queries, const Tensor& targets, const Tensor& hard_negatives,
                          std::size_t negatives_per_query, double tau) {
  require_tau(tau);
  const Tensor q = l2_normalize_rows(queries);
  const Tensor t = l2_normalize_rows(targets);
  if (q.dim(1) != t.dim(1)) throw ShapeError("score matrix: embedding widths differ");
  Tensor scores = scale(matmul(q, transpose(t)), 1.0 / tau);
  if (negatives_per_query == 0) return scores;
  const Tensor h = l2_normalize_rows(hard_negatives);
  return concat_cols(scores, scale(group_dot(q, h, negatives_per_query), 1.0 / tau));
}

LossValue info_nce(const TrainBatch& batch) {
  batch.validate();
  const std::size_t b = batch.size();
  if (b == 1 && batch.negatives_per_query == 0) {
    spdlog::warn("info_nce: single pair without negatives, loss is identically 0");
  }
  Tensor scores = build_score_matrix(batch.queries, batch.targets, batch.hard_negatives, batch.negatives_per_query,
                                     batch.temperature);
  std::vector<std::size_t> diag(b);
  std::iota(diag.begin(), diag.end(), std::size_t{0});
  Tensor loss = scale(mean(pick(log_softmax(scores, 1), diag)), -1.0);
  return {loss, scores.detach()};
}

}  // namespace emforge
