// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "emforge/instruction.hpp"
#include "emforge/model.hpp"
#include "emforge/tensor.hpp"

namespace emforge {

struct CorpusItem {
  std::string id;
  FormattedInput input;
};

// Row i is the normalized embedding of items[i]. With dedup, inputs with
// identical rendered text and image bytes are embedded once and share a row
// value. Chunks are embedded in parallel; rows do not depend on chunking.
Tensor embed_corpus(const Model& model, std::span<const CorpusItem> items, bool dedup = true);

struct ScoredPool {
  std::string query_id;
  std::vector<double> scores;
  std::size_t predicted = 0;
  std::size_t label = 0;

  bool correct() const { return predicted == label; }
};

// Index of the largest score; ties go to the lowest index.
std::size_t argmax_lowest(std::span<const double> scores);
// Dot product of the query with every candidate row, ascending over d.
std::vector<double> dot_scores(const Tensor& query, const Tensor& candidates);
// argmax of dot_scores.
std::size_t rank(const Tensor& query, const Tensor& candidates);

double precision_at_1(std::span<const ScoredPool> pools);

struct DatasetScore {
  std::string name;
  MetaTask meta_task = MetaTask::retrieval;
  bool ood = false;
  double p_at_1 = 0.0;
  std::size_t n = 0;  // pools

  bool operator==(const DatasetScore&) const = default;
};

struct GroupScore {
  double p_at_1 = 0.0;
  std::size_t datasets = 0;

  bool operator==(const GroupScore&) const = default;
};

// Every group is the unweighted mean over its datasets; empty groups are
// absent.
struct EvalReport {
  std::vector<DatasetScore> datasets;
  std::map<MetaTask, GroupScore> meta;
  std::optional<GroupScore> ind;
  std::optional<GroupScore> ood;
  GroupScore overall;

  bool operator==(const EvalReport&) const = default;
};

EvalReport aggregate(std::vector<DatasetScore> datasets);

}  // namespace emforge
