// SPDX-License-Identifier: Apache-2.0
#include "emforge/verify.hpp"

#include <algorithm>
#include <cmath>

#include "emforge/contrastive.hpp"
#include "emforge/ops.hpp"
#include "emforge/rng.hpp"
#include "emforge/tokenizer.hpp"

namespace emforge::cli {

ModelConfig toy_config() {
  ModelConfig c;
  c.hidden_dim = 16;
  c.layers = 2;
  c.heads = 2;
  c.max_seq = 32;
  return c;
}

namespace {

TokenSequence random_item(const ModelConfig& config, Rng& rng) {
  const auto kind = rng.below(3);  // 0 text, 1 image, 2 image + text
  std::string text;
  const auto len = 2 + rng.below(10);
  for (std::uint64_t i = 0; i < len; ++i) text.push_back(static_cast<char>('a' + rng.below(26)));
  std::optional<Tensor> image;
  if (kind != 0) {
    const std::size_t side = 2 * config.patch_size;
    std::vector<double> px(config.image_channels * side * side);
    for (auto& v : px) v = rng.uniform();
    image = Tensor::from_values({config.image_channels, side, side}, px, DType::f32);
    text = kind == 1 ? std::string(kImageMarker) : std::string(kImageMarker) + " " + text;
  }
  return build_sequence(text, image, config);
}

}  // namespace

SequenceBatch random_batch(const ModelConfig& config, std::size_t batch_size, std::size_t negatives_per_query,
                           std::uint64_t seed) {
  Rng rng(seed);
  SequenceBatch b;
  b.negatives_per_query = negatives_per_query;
  for (std::size_t i = 0; i < batch_size; ++i) b.queries.push_back(random_item(config, rng));
  for (std::size_t i = 0; i < batch_size; ++i) b.targets.push_back(random_item(config, rng));
  for (std::size_t i = 0; i < batch_size * negatives_per_query; ++i) b.hard_negatives.push_back(random_item(config, rng));
  return b;
}

double relative_l2(const NamedTensors& a, const NamedTensors& b) {
  double diff = 0.0, ref = 0.0;
  for (const auto& [name, tb] : b) {
    const auto x = a.at(name).to_vector();
    const auto y = tb.to_vector();
    for (std::size_t i = 0; i < y.size(); ++i) {
      diff += (x[i] - y[i]) * (x[i] - y[i]);
      ref += y[i] * y[i];
    }
  }
  if (ref == 0.0) return diff == 0.0 ? 0.0 : INFINITY;
  return std::sqrt(diff) / std::sqrt(ref);
}

EquivalenceRow check_equivalence(std::size_t batch_size, std::size_t sub_batch_size, DType dtype, std::uint64_t seed,
                                 double tau, bool inject_fault) {
  const ModelConfig config = toy_config();
  const Model model = init_model(config, Rng::derive(seed, {1}), dtype);
  const SequenceBatch batch = random_batch(config, batch_size, 0, Rng::derive(seed, {2, batch_size, sub_batch_size}));
  const SubBatchPartition part = partition(batch_size, sub_batch_size);

  const DirectResult direct = direct_backprop(model, batch, tau);
  const RepresentationCache cache = forward_cache(model, batch, part);
  const CachedLoss cached = loss_and_rep_grads(cache, tau);
  AccumulateOptions opts;
  opts.inject_sign_flip = inject_fault;
  const NamedTensors grads = accumulate_param_grads(model, batch, part, cached.grads, opts);

  EquivalenceRow row;
  row.batch_size = batch_size;
  row.sub_batch_size = sub_batch_size;
  row.dtype = dtype;
  row.rel_error = relative_l2(grads, direct.grads);
  row.loss_abs_diff = std::abs(cached.loss.value() - direct.loss.value());
  row.tolerance = dtype == DType::f64 ? 1e-10 : 1e-4;
  row.pass = row.rel_error <= row.tolerance;
  return row;
}

namespace {

double pipeline_loss(const Model& model, const SequenceBatch& batch, double tau) {
  std::vector<TokenSequence> seqs = batch.queries;
  seqs.insert(seqs.end(), batch.targets.begin(), batch.targets.end());
  const Tensor emb = encode_batch(seqs, model, true);
  const std::size_t b = batch.size();
  TrainBatch tb{slice_rows(emb, 0, b), slice_rows(emb, b, b), {}, 0, tau};
  return info_nce(tb).value();
}

Model perturbed(const Model& model, const std::string& name, std::size_t index, double delta) {
  Model out = model;
  auto values = model.params.at(name).data<double>();
  std::vector<double> v(values.begin(), values.end());
  v[index] += delta;
  out.params.set(name, make_tensor<double>(model.params.at(name).shape(), std::move(v)));
  return out;
}

}  // namespace

FiniteDifferenceResult check_finite_differences(const ModelConfig& config, std::uint64_t seed,
                                                const FiniteDifferenceOptions& options) {
  Model model = init_model(config, Rng::derive(seed, {3}), DType::f64);
  // Perturb the zero-initialized tensors so every path carries signal.
  Rng noise(Rng::derive(seed, {4}));
  for (const auto& [name, t] : NamedTensors(model.params)) {
    auto values = t.data<double>();
    std::vector<double> v(values.begin(), values.end());
    for (auto& x : v) x += 0.05 * noise.normal();
    model.params.set(name, make_tensor<double>(t.shape(), std::move(v)));
  }
  const SequenceBatch batch = random_batch(config, 4, 0, Rng::derive(seed, {5}));
  const DirectResult direct = direct_backprop(model, batch, options.tau);

  FiniteDifferenceResult result;
  Rng pick(Rng::derive(seed, {6}));
  for (const auto& [name, t] : direct.grads) {
    const auto g = t.to_vector();
    const std::size_t n = g.size();
    std::vector<std::size_t> entries;
    if (n <= options.samples_per_tensor) {
      for (std::size_t i = 0; i < n; ++i) entries.push_back(i);
    } else {
      entries = pick.sample_without_replacement(n, options.samples_per_tensor);
    }
    for (std::size_t i : entries) {
      const double up = pipeline_loss(perturbed(model, name, i, options.step), batch, options.tau);
      const double down = pipeline_loss(perturbed(model, name, i, -options.step), batch, options.tau);
      const double fd = (up - down) / (2.0 * options.step);
      const double err = std::abs(fd - g[i]) / std::max({std::abs(fd), std::abs(g[i]), options.floor});
      ++result.checked;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  result.pass = result.max_rel_error <= options.tolerance;
  return result;
}

}  // namespace emforge::cli
