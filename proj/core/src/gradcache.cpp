// SPDX-License-Identifier: Apache-2.0
#include "emforge/gradcache.hpp"

#include <algorithm>
#include <string>

#include "emforge/ops.hpp"
#include "emforge/parallel.hpp"
#include "emforge/tape.hpp"

namespace emforge {

std::size_t SubBatchPartition::batch_size() const {
  return ranges.empty() ? 0 : ranges.back().first + ranges.back().second;
}

SubBatchPartition partition(std::size_t batch_size, std::size_t sub_batch_size) {
  if (batch_size == 0 || sub_batch_size == 0) throw ConfigError("partition: batch and sub-batch sizes must be >= 1");
  SubBatchPartition part;
  part.sub_batch_size = sub_batch_size;
  for (std::size_t begin = 0; begin < batch_size; begin += sub_batch_size) {
    part.ranges.emplace_back(begin, std::min(sub_batch_size, batch_size - begin));
  }
  return part;
}

void SequenceBatch::validate() const {
  if (queries.empty()) throw DataError("training batch is empty");
  if (targets.size() != queries.size()) throw DataError("training batch: query/target counts differ");
  if (hard_negatives.size() != queries.size() * negatives_per_query) {
    throw DataError("training batch: expected " + std::to_string(queries.size() * negatives_per_query) +
                    " hard negatives, got " + std::to_string(hard_negatives.size()));
  }
}

std::size_t RepresentationCache::count() const {
  std::size_t n = 0;
  for (const Tensor* t : {&queries, &targets, &hard_negatives}) n += t->defined() ? t->dim(0) : 0;
  return n;
}

namespace {

void check_alignment(const SequenceBatch& batch, const SubBatchPartition& part) {
  batch.validate();
  if (part.batch_size() != batch.size()) {
    throw DataError("partition covers " + std::to_string(part.batch_size()) + " items, batch has " +
                    std::to_string(batch.size()));
  }
}

// Sequences of one sub-batch in encode order: queries, targets, then the
// hard negatives of those queries.
std::vector<TokenSequence> sub_batch_sequences(const SequenceBatch& batch, std::size_t begin, std::size_t count) {
  std::vector<TokenSequence> seqs;
  const std::size_t k = batch.negatives_per_query;
  seqs.reserve(count * (2 + k));
  seqs.insert(seqs.end(), batch.queries.begin() + static_cast<std::ptrdiff_t>(begin),
              batch.queries.begin() + static_cast<std::ptrdiff_t>(begin + count));
  seqs.insert(seqs.end(), batch.targets.begin() + static_cast<std::ptrdiff_t>(begin),
              batch.targets.begin() + static_cast<std::ptrdiff_t>(begin + count));
  seqs.insert(seqs.end(), batch.hard_negatives.begin() + static_cast<std::ptrdiff_t>(begin * k),
              batch.hard_negatives.begin() + static_cast<std::ptrdiff_t>((begin + count) * k));
  return seqs;
}

// Names the offending item when a sub-batch fails to encode. Positions
// follow sub_batch_sequences: count queries, count targets, count * k negatives.
std::string describe_item(std::size_t pos, std::size_t begin, std::size_t count, std::size_t k) {
  if (pos < count) return "query " + std::to_string(begin + pos);
  if (pos < 2 * count) return "target " + std::to_string(begin + pos - count);
  const std::size_t h = pos - 2 * count;
  return "hard negative " + std::to_string(h % k) + " of item " + std::to_string(begin + h / k);
}

Tensor encode_checked(std::span<const TokenSequence> seqs, const Model& model, std::size_t begin, std::size_t count,
                      std::size_t k) {
  try {
    return encode_batch(seqs, model, true);
  } catch (const NumericError& e) {
    throw NumericError("encoding sub-batch starting at item " + std::to_string(begin) + ": " + e.what());
  } catch (const Error& e) {
    for (std::size_t pos = 0; pos < seqs.size(); ++pos) {
      try {
        encode_batch(seqs.subspan(pos, 1), model, true);
      } catch (const Error& single) {
        throw DataError("cannot encode " + describe_item(pos, begin, count, k) + ": " + single.what());
      }
    }
    throw DataError("encoding sub-batch starting at item " + std::to_string(begin) + ": " + e.what());
  }
}

struct Split {
  Tensor queries, targets, negatives;
};

Split split_rows(const Tensor& emb, std::size_t count, std::size_t k) {
  Split s;
  s.queries = slice_rows(emb, 0, count);
  s.targets = slice_rows(emb, count, count);
  if (k > 0) s.negatives = slice_rows(emb, 2 * count, count * k);
  return s;
}

Model with_params(const Model& model, const NamedTensors& replaced) {
  Model out{model.config, {}};
  for (const auto& [name, t] : model.params) out.params.set(name, replaced.contains(name) ? replaced.at(name) : t);
  return out;
}

NamedTensors select(const NamedTensors& params, const std::vector<std::string>& names) {
  NamedTensors out;
  for (const auto& n : names) out.set(n, params.at(n));
  return out;
}

NamedTensors vjp_sub_batch(const Model& model, const std::vector<std::string>& trainable,
                           const std::vector<TokenSequence>& seqs, const Tensor& seed, std::size_t begin,
                           std::size_t count, std::size_t k) {
  Tape tape;
  const NamedTensors watched = tape.watch(select(model.params, trainable));
  const Model tracked = with_params(model, watched);
  const Tensor emb = encode_checked(seqs, tracked, begin, count, k);
  std::vector<Tensor> wrt;
  wrt.reserve(trainable.size());
  for (const auto& [name, t] : watched) wrt.push_back(t);
  const std::vector<Tensor> outs{emb};
  const std::vector<Tensor> seeds{seed};
  const auto grads = tape.backward(outs, seeds, wrt);
  NamedTensors result;
  for (std::size_t i = 0; i < trainable.size(); ++i) result.set(trainable[i], grads[i]);
  return result;
}

}  // namespace

RepresentationCache forward_cache(const Model& model, const SequenceBatch& batch, const SubBatchPartition& part) {
  check_alignment(batch, part);
  const std::size_t k = batch.negatives_per_query;
  std::vector<Tensor> embedded(part.ranges.size());
  parallel_for(part.ranges.size(), [&](std::size_t j) {
    const auto [begin, count] = part.ranges[j];
    const auto seqs = sub_batch_sequences(batch, begin, count);
    embedded[j] = encode_checked(seqs, model, begin, part.ranges[j].second, k);
  });
  std::vector<Tensor> qs, ts, hs;
  for (std::size_t j = 0; j < part.ranges.size(); ++j) {
    const Split s = split_rows(embedded[j], part.ranges[j].second, k);
    qs.push_back(s.queries);
    ts.push_back(s.targets);
    if (k > 0) hs.push_back(s.negatives);
  }
  RepresentationCache cache;
  cache.queries = concat_rows(qs);
  cache.targets = concat_rows(ts);
  if (k > 0) cache.hard_negatives = concat_rows(hs);
  cache.negatives_per_query = k;
  return cache;
}

CachedLoss loss_and_rep_grads(const RepresentationCache& cache, double tau) {
  Tape tape;
  TrainBatch tb;
  tb.queries = tape.watch(cache.queries.detach());
  tb.targets = tape.watch(cache.targets.detach());
  tb.negatives_per_query = cache.negatives_per_query;
  if (cache.negatives_per_query > 0) tb.hard_negatives = tape.watch(cache.hard_negatives.detach());
  tb.temperature = tau;
  LossValue loss = info_nce(tb);
  std::vector<Tensor> wrt{tb.queries, tb.targets};
  if (cache.negatives_per_query > 0) wrt.push_back(tb.hard_negatives);
  const auto g = tape.backward(loss.loss, wrt);
  check_finite(loss.loss, "loss_and_rep_grads");
  CachedLoss out{{loss.loss.detach(), loss.scores}, {g[0], g[1], {}}};
  if (cache.negatives_per_query > 0) out.grads.hard_negatives = g[2];
  return out;
}

NamedTensors accumulate_param_grads(const Model& model, const SequenceBatch& batch, const SubBatchPartition& part,
                                    const GradientCache& grad_cache, const AccumulateOptions& options) {
  check_alignment(batch, part);
  const std::size_t b = batch.size(), k = batch.negatives_per_query;
  const std::size_t d = model.config.hidden_dim;
  auto expect = [&](const Tensor& t, std::size_t rows, const char* what) {
    if (!t.defined() || t.shape() != Shape{rows, d}) {
      throw DataError(std::string("gradient cache misaligned with batch: ") + what);
    }
  };
  expect(grad_cache.queries, b, "queries");
  expect(grad_cache.targets, b, "targets");
  if (k > 0) expect(grad_cache.hard_negatives, b * k, "hard negatives");

  std::vector<std::size_t> order = options.order;
  if (order.empty()) {
    for (std::size_t j = 0; j < part.ranges.size(); ++j) order.push_back(j);
  }
  {
    auto sorted = order;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t j = 0; j < sorted.size(); ++j) {
      if (sorted.size() != part.ranges.size() || sorted[j] != j) throw ConfigError("accumulate: order is not a permutation");
    }
  }
  const bool canonical = std::is_sorted(order.begin(), order.end());
  const auto trainable = trainable_parameters(model.config);

  auto seed_for = [&](std::size_t j) {
    const auto [begin, count] = part.ranges[j];
    std::vector<Tensor> parts{slice_rows(grad_cache.queries, begin, count), slice_rows(grad_cache.targets, begin, count)};
    if (k > 0) parts.push_back(slice_rows(grad_cache.hard_negatives, begin * k, count * k));
    Tensor seed = concat_rows(parts);
    if (options.inject_sign_flip && j + 1 == part.ranges.size()) seed = scale(seed, -1.0);
    return seed;
  };
  auto contribution = [&](std::size_t j) {
    const auto [begin, count] = part.ranges[j];
    return vjp_sub_batch(model, trainable, sub_batch_sequences(batch, begin, count), seed_for(j), begin, count, k);
  };
  auto reduce_into = [](NamedTensors& total, const NamedTensors& g) {
    if (total.empty()) {
      total = g;
      return;
    }
    for (const auto& [name, t] : g) total.set(name, add(total.at(name), t));
  };

  NamedTensors total;
  if (canonical) {
    // Streaming: only one sub-batch tape is alive at a time.
    for (std::size_t j : order) reduce_into(total, contribution(j));
  } else {
    std::vector<NamedTensors> buffered(part.ranges.size());
    for (std::size_t j : order) buffered[j] = contribution(j);
    for (auto& g : buffered) reduce_into(total, g);
  }
  return total;
}

DirectResult direct_backprop(const Model& model, const SequenceBatch& batch, double tau) {
  batch.validate();
  const std::size_t b = batch.size(), k = batch.negatives_per_query;
  const auto trainable = trainable_parameters(model.config);
  Tape tape;
  const NamedTensors watched = tape.watch(select(model.params, trainable));
  const Model tracked = with_params(model, watched);
  const auto seqs = sub_batch_sequences(batch, 0, b);
  const Split s = split_rows(encode_checked(seqs, tracked, 0, b, k), b, k);
  TrainBatch tb{s.queries, s.targets, s.negatives, k, tau};
  LossValue loss = info_nce(tb);
  std::vector<Tensor> wrt;
  for (const auto& [name, t] : watched) wrt.push_back(t);
  const auto grads = tape.backward(loss.loss, wrt);
  DirectResult out{{loss.loss.detach(), loss.scores}, {}};
  for (std::size_t i = 0; i < trainable.size(); ++i) out.grads.set(trainable[i], grads[i]);
  return out;
}

namespace {

StepResult apply_update(const Model& model, const NamedTensors& grads, const AdamWState& optimizer, double lr,
                        LossValue loss) {
  AdamWResult updated = adamw_update(model.params, grads, optimizer, lr);
  return {Model{model.config, std::move(updated.params)}, std::move(updated.state), std::move(loss)};
}

}  // namespace

StepResult train_step(const Model& model, const SequenceBatch& batch, const SubBatchPartition& part,
                      const AdamWState& optimizer, double lr, double tau) {
  const RepresentationCache cache = forward_cache(model, batch, part);
  const CachedLoss cached = loss_and_rep_grads(cache, tau);
  const NamedTensors grads = accumulate_param_grads(model, batch, part, cached.grads);
  return apply_update(model, grads, optimizer, lr, cached.loss);
}

StepResult train_step_direct(const Model& model, const SequenceBatch& batch, const AdamWState& optimizer, double lr,
                             double tau) {
  DirectResult direct = direct_backprop(model, batch, tau);
  return apply_update(model, direct.grads, optimizer, lr, direct.loss);
}

}  // namespace emforge
