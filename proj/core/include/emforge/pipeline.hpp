// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "emforge/dataset.hpp"
#include "emforge/eval.hpp"
#include "emforge/gradcache.hpp"
#include "emforge/instruction.hpp"
#include "emforge/model.hpp"

namespace emforge {

// Formats a record's query, optionally without the instruction.
FormattedInput format_record_query(const ExampleRecord& record, const TaskRegistry& tasks, const ImageStore& images,
                                   bool with_instruction);
FormattedInput format_record_target(const ExampleRecord& record, const Content& target, const TaskRegistry& tasks,
                                    const ImageStore& images);

// Tokenized training split, built once.
class TrainingSet {
 public:
  TrainingSet(const Dataset& dataset, const TaskRegistry& tasks, const ModelConfig& config, bool with_instructions);

  // Batch of the given record indices (indices into dataset.records).
  SequenceBatch batch(std::span<const std::size_t> records) const;
  const Dataset& dataset() const { return *dataset_; }

 private:
  struct Encoded {
    TokenSequence query;
    TokenSequence target;
    std::vector<TokenSequence> negatives;
  };
  const Dataset* dataset_;
  std::vector<std::ptrdiff_t> slot_;  // record index -> entries_ position, -1 if not training
  std::vector<Encoded> entries_;
};

struct TrainOptions {
  std::size_t batch_size = 64;
  std::size_t sub_batch_size = 8;
  std::size_t steps = 500;
  double lr = 1e-3;
  double temperature = 0.02;
  std::uint64_t seed = 0;
  bool with_instructions = true;

  void validate() const;
};

struct StepLog {
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  Model model;
  std::vector<StepLog> log;
};

// Stream used for batch sampling, separate from the init stream.
std::uint64_t sampling_seed(std::uint64_t seed);

TrainResult train(const Model& init, const Dataset& dataset, const TaskRegistry& tasks, const TrainOptions& options,
                  const std::function<void(const StepLog&)>& on_step = {});

struct EvalOptions {
  bool with_instructions = true;
  bool dedup = true;
};

struct EvalOutput {
  EvalReport report;
  std::vector<ScoredPool> pools;  // eval records in manifest order
};

EvalOutput evaluate(const Model& model, const Dataset& dataset, const TaskRegistry& tasks, const EvalOptions& options = {});

}  // namespace emforge
