// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

#include "emforge/encoder.hpp"
#include "emforge/tensor.hpp"

namespace emforge {

// Temperature-scaled cosine score in log space: cos(q, t) / tau.
double log_similarity(const EmbeddingVector& q, const EmbeddingVector& t, double tau);
// exp(log_similarity). Overflows for very small tau; tests only.
double similarity(const EmbeddingVector& q, const EmbeddingVector& t, double tau);

struct TrainBatch {
  Tensor queries;         // [B x d]
  Tensor targets;         // [B x d], row i is the positive of query i
  Tensor hard_negatives;  // [B*k x d] grouped by query, undefined when k = 0
  std::size_t negatives_per_query = 0;
  double temperature = 0.02;

  std::size_t size() const { return queries.defined() ? queries.dim(0) : 0; }
  void validate() const;
};

struct LossValue {
  Tensor loss;    // shape {1}; tracked when the embeddings are
  Tensor scores;  // [B x (B+k)] log-scores, detached
  double value() const { return loss.item(); }
};

// Entry (i, j) = cos(q_i, t_j) / tau for the first B columns, followed by
// query i's k hard negatives. Rows are re-normalized, so unnormalized
// inputs yield cosines too. Row i's positive is column i.
Tensor build_score_matrix(const Tensor& queries, const Tensor& targets, const Tensor& hard_negatives,
                          std::size_t negatives_per_query, double tau);

// Mean over queries of -log softmax(scores)_ii. A single pair without hard
// negatives yields exactly 0 and logs a warning.
LossValue info_nce(const TrainBatch& batch);

}  // namespace emforge
