// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "emforge/contrastive.hpp"
#include "emforge/encoder.hpp"
#include "emforge/model.hpp"
#include "emforge/optimizer.hpp"

namespace emforge {

// Contiguous, in-order index ranges (begin, count) covering [0, B).
struct SubBatchPartition {
  std::vector<std::pair<std::size_t, std::size_t>> ranges;
  std::size_t sub_batch_size = 0;

  std::size_t batch_size() const;
};

SubBatchPartition partition(std::size_t batch_size, std::size_t sub_batch_size);

// Tokenized training batch. hard_negatives holds negatives_per_query
// sequences per query, grouped by query.
struct SequenceBatch {
  std::vector<TokenSequence> queries;
  std::vector<TokenSequence> targets;
  std::vector<TokenSequence> hard_negatives;
  std::size_t negatives_per_query = 0;

  std::size_t size() const { return queries.size(); }
  void validate() const;
};

// Untracked embeddings in batch order.
struct RepresentationCache {
  Tensor queries;
  Tensor targets;
  Tensor hard_negatives;  // undefined when there are none
  std::size_t negatives_per_query = 0;

  std::size_t count() const;
};

// dL/d(embedding) for every cached embedding, same layout as the cache.
struct GradientCache {
  Tensor queries;
  Tensor targets;
  Tensor hard_negatives;
};

// Embeds each sub-batch without a tape. Sub-batches may run concurrently;
// the result does not depend on the partition.
RepresentationCache forward_cache(const Model& model, const SequenceBatch& batch, const SubBatchPartition& part);

struct CachedLoss {
  LossValue loss;
  GradientCache grads;
};
CachedLoss loss_and_rep_grads(const RepresentationCache& cache, double tau);

struct AccumulateOptions {
  // Processing order of sub-batches; empty means partition order. Results
  // are always reduced in partition order.
  std::vector<std::size_t> order;
  // Verification hook: negates the contribution of the last sub-batch.
  bool inject_sign_flip = false;
};

// Sum over sub-batches of the vector-Jacobian product of u with the encoder,
// one fresh tape per sub-batch. Returns gradients for the trainable
// parameters of the model's config.
NamedTensors accumulate_param_grads(const Model& model, const SequenceBatch& batch, const SubBatchPartition& part,
                                    const GradientCache& grad_cache, const AccumulateOptions& options = {});

// Reference path: one tracked forward over the whole batch and a single
// backward from the loss.
struct DirectResult {
  LossValue loss;
  NamedTensors grads;
};
DirectResult direct_backprop(const Model& model, const SequenceBatch& batch, double tau);

struct StepResult {
  Model model;
  AdamWState optimizer;
  LossValue loss;
};

// forward_cache -> loss_and_rep_grads -> accumulate_param_grads -> AdamW.
// Inputs are never modified, so a throwing step leaves the caller's state
// intact.
StepResult train_step(const Model& model, const SequenceBatch& batch, const SubBatchPartition& part,
                      const AdamWState& optimizer, double lr, double tau);

// Same update computed from direct_backprop gradients.
StepResult train_step_direct(const Model& model, const SequenceBatch& batch, const AdamWState& optimizer, double lr,
                             double tau);

}  // namespace emforge
