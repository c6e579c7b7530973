// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "emforge/instruction.hpp"
#include "emforge/tensor.hpp"

namespace emforge {

enum class Split { train, eval };
std::string to_string(Split split);

// Text and/or image path (relative to the manifest directory).
struct Content {
  std::optional<std::string> text;
  std::optional<std::string> image;

  Modality modality() const;  // DataError when empty
  bool operator==(const Content&) const = default;
  bool operator<(const Content& o) const;
};

struct ExampleRecord {
  std::string id;
  std::string task_id;
  Split split = Split::train;
  Content query;
  std::optional<Content> positive;
  std::vector<Content> hard_negatives;
  std::vector<Content> candidates;  // eval only
  std::optional<std::size_t> label_index;

  bool operator==(const ExampleRecord&) const = default;
};

nlohmann::json to_json(const ExampleRecord& record);
ExampleRecord record_from_json(const nlohmann::json& j);

// Throws DataError naming the record when it violates the split rules or
// the task's declared modalities.
void validate_record(const ExampleRecord& record, const TaskRegistry& tasks);

struct Dataset {
  std::filesystem::path root;  // directory holding the manifest
  std::vector<ExampleRecord> records;

  std::vector<std::size_t> indices(Split split) const;
  // Task ids of the split in order of first appearance.
  std::vector<std::string> task_ids(Split split) const;
  std::filesystem::path resolve(const std::string& relative) const { return root / relative; }
};

inline constexpr std::size_t kDefaultTrainCap = 50000;

struct LoadOptions {
  std::size_t train_cap = kDefaultTrainCap;  // per task_id
  std::uint64_t seed = 0;                    // for cap sampling
};

// One JSON record per line. Malformed lines are reported by line number.
// When a task has more than train_cap training records, a seeded uniform
// subset of that size is kept in file order.
Dataset load_manifest(const std::filesystem::path& path, const TaskRegistry& tasks, const LoadOptions& options = {});
void save_manifest(const std::filesystem::path& path, const std::vector<ExampleRecord>& records);

// Lazily loads and memoizes image blobs. Safe for concurrent readers.
class ImageStore {
 public:
  explicit ImageStore(std::filesystem::path root) : root_(std::move(root)) {}
  Tensor get(const std::string& relative) const;

 private:
  std::filesystem::path root_;
  mutable std::mutex mutex_;
  mutable std::map<std::string, Tensor> cache_;
};

// Training-record indices for one step. Each task keeps its own seeded
// shuffled-epoch stream; the batch's slots are split evenly across tasks
// (remainder slots rotate with the step), so (seed, step) alone determines
// the batch.
std::vector<std::size_t> sample_batch(const Dataset& dataset, std::size_t batch_size, std::uint64_t step,
                                      std::uint64_t seed);

}  // namespace emforge
