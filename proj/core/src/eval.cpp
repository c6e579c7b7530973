// SPDX-License-Identifier: Apache-2.0
#include "emforge/eval.hpp"

#include <algorithm>
#include <unordered_map>

#include "emforge/encoder.hpp"
#include "emforge/ops.hpp"
#include "emforge/parallel.hpp"
#include "emforge/serialize.hpp"

namespace emforge {
namespace {

constexpr std::size_t kChunk = 32;

std::string content_key(const FormattedInput& in) {
  std::string key = in.text;
  key.push_back('\0');
  if (in.image) {
    const auto bytes = encode_tensor(*in.image);
    key.append(bytes.begin(), bytes.end());
  }
  return key;
}

}  // namespace

Tensor embed_corpus(const Model& model, std::span<const CorpusItem> items, bool dedup) {
  if (items.empty()) throw DataError("embed_corpus: no inputs");
  std::vector<std::size_t> row_of(items.size());
  std::vector<std::size_t> unique;
  std::unordered_map<std::string, std::size_t> seen;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (dedup) {
      auto [it, inserted] = seen.emplace(content_key(items[i].input), unique.size());
      if (inserted) unique.push_back(i);
      row_of[i] = it->second;
    } else {
      row_of[i] = unique.size();
      unique.push_back(i);
    }
  }

  const std::size_t chunks = (unique.size() + kChunk - 1) / kChunk;
  std::vector<Tensor> parts(chunks);
  parallel_for(chunks, [&](std::size_t c) {
    const std::size_t begin = c * kChunk, end = std::min(unique.size(), begin + kChunk);
    std::vector<TokenSequence> seqs;
    for (std::size_t u = begin; u < end; ++u) {
      const CorpusItem& item = items[unique[u]];
      try {
        seqs.push_back(build_sequence(item.input.text, item.input.image, model.config));
      } catch (const Error& e) {
        throw DataError("input '" + item.id + "': " + e.what());
      }
    }
    try {
      parts[c] = encode_batch(seqs, model, true);
    } catch (const NumericError&) {
      throw;
    } catch (const Error& e) {
      throw DataError("embedding inputs '" + items[unique[begin]].id + "'..'" + items[unique[end - 1]].id + "': " + e.what());
    }
  });
  const Tensor table = concat_rows(parts);
  if (!dedup) return table;
  return gather_rows(table, row_of);
}

std::size_t argmax_lowest(std::span<const double> scores) {
  if (scores.empty()) throw DataError("rank: empty candidate pool");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

std::vector<double> dot_scores(const Tensor& query, const Tensor& candidates) {
  if (candidates.rank() != 2 || candidates.dim(0) == 0) throw ShapeError("rank: candidates must be [n x d]");
  const std::size_t n = candidates.dim(0), d = candidates.dim(1);
  if (query.numel() != d) {
    throw ShapeError("rank: query has " + std::to_string(query.numel()) + " dims, candidates " + std::to_string(d));
  }
  const auto q = query.to_vector();
  const auto c = candidates.to_vector();
  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) acc += q[j] * c[i * d + j];
    scores[i] = acc;
  }
  return scores;
}

std::size_t rank(const Tensor& query, const Tensor& candidates) {
  const auto scores = dot_scores(query, candidates);
  return argmax_lowest(scores);
}

double precision_at_1(std::span<const ScoredPool> pools) {
  if (pools.empty()) throw DataError("precision_at_1: no pools");
  std::size_t hits = 0;
  for (const auto& p : pools) hits += p.correct() ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(pools.size());
}

EvalReport aggregate(std::vector<DatasetScore> datasets) {
  if (datasets.empty()) throw DataError("aggregate: no datasets");
  std::sort(datasets.begin(), datasets.end(), [](const DatasetScore& a, const DatasetScore& b) { return a.name < b.name; });
  for (std::size_t i = 1; i < datasets.size(); ++i) {
    if (datasets[i].name == datasets[i - 1].name) throw DataError("aggregate: duplicate dataset '" + datasets[i].name + "'");
  }
  auto mean_of = [&](auto&& pred) -> std::optional<GroupScore> {
    GroupScore g;
    double total = 0.0;
    for (const auto& d : datasets) {
      if (!pred(d)) continue;
      total += d.p_at_1;
      ++g.datasets;
    }
    if (g.datasets == 0) return std::nullopt;
    g.p_at_1 = total / static_cast<double>(g.datasets);
    return g;
  };
  EvalReport report;
  report.datasets = datasets;
  for (MetaTask m : kAllMetaTasks) {
    if (auto g = mean_of([m](const DatasetScore& d) { return d.meta_task == m; })) report.meta.emplace(m, *g);
  }
  report.ind = mean_of([](const DatasetScore& d) { return !d.ood; });
  report.ood = mean_of([](const DatasetScore& d) { return d.ood; });
  report.overall = *mean_of([](const DatasetScore&) { return true; });
  return report;
}

}  // namespace emforge
