// SPDX-License-Identifier: Apache-2.0
#include "emforge/pipeline.hpp"

#include <chrono>
#include <map>

#include "emforge/ops.hpp"
#include "emforge/rng.hpp"

namespace emforge {
namespace {

std::optional<Tensor> image_of(const Content& c, const ImageStore& images) {
  if (!c.image) return std::nullopt;
  return images.get(*c.image);
}

TokenSequence tokenize(const FormattedInput& in, const ModelConfig& config, const std::string& who) {
  try {
    return build_sequence(in.text, in.image, config);
  } catch (const Error& e) {
    throw DataError(who + ": " + e.what());
  }
}

}  // namespace

FormattedInput format_record_query(const ExampleRecord& record, const TaskRegistry& tasks, const ImageStore& images,
                                   bool with_instruction) {
  return format_query(tasks.at(record.task_id), record.query.text, image_of(record.query, images), with_instruction);
}

FormattedInput format_record_target(const ExampleRecord& record, const Content& target, const TaskRegistry& tasks,
                                    const ImageStore& images) {
  return format_target(tasks.at(record.task_id), target.text, image_of(target, images));
}

TrainingSet::TrainingSet(const Dataset& dataset, const TaskRegistry& tasks, const ModelConfig& config,
                         bool with_instructions)
    : dataset_(&dataset), slot_(dataset.records.size(), -1) {
  const ImageStore images(dataset.root);
  for (std::size_t i = 0; i < dataset.records.size(); ++i) {
    const ExampleRecord& r = dataset.records[i];
    if (r.split != Split::train) continue;
    const std::string who = "record '" + r.id + "'";
    Encoded e;
    e.query = tokenize(format_record_query(r, tasks, images, with_instructions), config, who);
    e.target = tokenize(format_record_target(r, *r.positive, tasks, images), config, who);
    for (const auto& neg : r.hard_negatives) e.negatives.push_back(tokenize(format_record_target(r, neg, tasks, images), config, who));
    slot_[i] = static_cast<std::ptrdiff_t>(entries_.size());
    entries_.push_back(std::move(e));
  }
  if (entries_.empty()) throw DataError("dataset has no training records");
}

SequenceBatch TrainingSet::batch(std::span<const std::size_t> records) const {
  SequenceBatch b;
  bool first = true;
  for (std::size_t idx : records) {
    if (idx >= slot_.size() || slot_[idx] < 0) throw DataError("batch index " + std::to_string(idx) + " is not a training record");
    const Encoded& e = entries_[static_cast<std::size_t>(slot_[idx])];
    if (first) {
      b.negatives_per_query = e.negatives.size();
      first = false;
    } else if (e.negatives.size() != b.negatives_per_query) {
      throw DataError("records in one batch carry different numbers of hard negatives");
    }
    b.queries.push_back(e.query);
    b.targets.push_back(e.target);
    b.hard_negatives.insert(b.hard_negatives.end(), e.negatives.begin(), e.negatives.end());
  }
  return b;
}

void TrainOptions::validate() const {
  if (batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
  if (sub_batch_size == 0 || sub_batch_size > batch_size) throw ConfigError("train.sub_batch_size must be in [1, batch_size]");
  if (steps == 0) throw ConfigError("train.steps must be >= 1");
  if (!(temperature > 0.0)) throw ConfigError("train.temperature must be positive");
  if (!(lr >= 0.0)) throw ConfigError("train.lr must be non-negative");
}

std::uint64_t sampling_seed(std::uint64_t seed) { return Rng::derive(seed, {0x73616d706c65ULL}); }

TrainResult train(const Model& init, const Dataset& dataset, const TaskRegistry& tasks, const TrainOptions& options,
                  const std::function<void(const StepLog&)>& on_step) {
  options.validate();
  validate_model(init);
  const TrainingSet set(dataset, tasks, init.config, options.with_instructions);
  const SubBatchPartition part = partition(options.batch_size, options.sub_batch_size);
  const std::uint64_t sample_seed = sampling_seed(options.seed);

  TrainResult result{init, {}};
  AdamWState opt = init_adamw(init.params, trainable_parameters(init.config));
  for (std::size_t step = 0; step < options.steps; ++step) {
    const auto start = std::chrono::steady_clock::now();
    const auto indices = sample_batch(dataset, options.batch_size, step, sample_seed);
    const double lr = scheduled_lr(options.lr, step, options.steps);
    StepResult res = train_step(result.model, set.batch(indices), part, opt, lr, options.temperature);
    result.model = std::move(res.model);
    opt = std::move(res.optimizer);
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
    StepLog entry{step, res.loss.value(), lr, elapsed.count()};
    result.log.push_back(entry);
    if (on_step) on_step(entry);
  }
  return result;
}

EvalOutput evaluate(const Model& model, const Dataset& dataset, const TaskRegistry& tasks, const EvalOptions& options) {
  validate_model(model);
  const ImageStore images(dataset.root);
  const auto eval_ids = dataset.indices(Split::eval);
  if (eval_ids.empty()) throw DataError("dataset has no evaluation records");

  std::vector<CorpusItem> queries, candidates;
  std::vector<std::size_t> pool_begin;
  for (std::size_t idx : eval_ids) {
    const ExampleRecord& r = dataset.records[idx];
    queries.push_back({r.id, format_record_query(r, tasks, images, options.with_instructions)});
    pool_begin.push_back(candidates.size());
    for (std::size_t c = 0; c < r.candidates.size(); ++c) {
      candidates.push_back({r.id + "#" + std::to_string(c), format_record_target(r, r.candidates[c], tasks, images)});
    }
  }
  const Tensor q_emb = embed_corpus(model, queries, options.dedup);
  const Tensor c_emb = embed_corpus(model, candidates, options.dedup);

  EvalOutput out;
  std::map<std::string, std::vector<ScoredPool>> by_task;
  for (std::size_t k = 0; k < eval_ids.size(); ++k) {
    const ExampleRecord& r = dataset.records[eval_ids[k]];
    ScoredPool pool;
    pool.query_id = r.id;
    pool.scores = dot_scores(slice_rows(q_emb, k, 1), slice_rows(c_emb, pool_begin[k], r.candidates.size()));
    pool.predicted = argmax_lowest(pool.scores);
    pool.label = *r.label_index;
    by_task[r.task_id].push_back(pool);
    out.pools.push_back(std::move(pool));
  }
  std::vector<DatasetScore> scores;
  for (const auto& [task_id, pools] : by_task) {
    const TaskSpec& task = tasks.at(task_id);
    scores.push_back({task_id, task.meta_task, task.ood, precision_at_1(pools), pools.size()});
  }
  out.report = aggregate(std::move(scores));
  return out;
}

}  // namespace emforge
