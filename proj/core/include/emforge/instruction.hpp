// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "emforge/tensor.hpp"

namespace emforge {

enum class MetaTask { classification, vqa, retrieval, grounding };
inline constexpr MetaTask kAllMetaTasks[] = {MetaTask::classification, MetaTask::vqa, MetaTask::retrieval,
                                             MetaTask::grounding};

std::string to_string(MetaTask task);
MetaTask meta_task_from_string(const std::string& name);

enum class Modality { text, image, image_text };

std::string to_string(Modality m);
Modality modality_from_string(const std::string& name);  // "T", "I", "I+T"

struct TaskSpec {
  std::string task_id;
  MetaTask meta_task = MetaTask::retrieval;
  std::string definition;
  Modality query_modality = Modality::text;
  Modality target_modality = Modality::text;
  bool ood = false;
  std::optional<std::string> target_instruction;

  void validate() const;
  bool operator==(const TaskSpec&) const = default;
};

nlohmann::json to_json(const TaskSpec& task);
TaskSpec task_from_json(const nlohmann::json& j);

class TaskRegistry {
 public:
  void add(TaskSpec task);  // rejects duplicate ids
  const TaskSpec& at(const std::string& task_id) const;
  bool contains(const std::string& task_id) const;
  const std::vector<TaskSpec>& tasks() const { return tasks_; }
  // Adds every task of `other` that is not already present; conflicting
  // definitions for the same id are an error.
  void merge(const TaskRegistry& other);

  nlohmann::json to_json() const;
  static TaskRegistry from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static TaskRegistry load(const std::filesystem::path& path);

 private:
  std::vector<TaskSpec> tasks_;
};

// One task per synthetic meta-task family.
TaskRegistry default_registry();

// Rendered model input. The literal "[IMG]" marker appears exactly once iff
// an image is attached.
struct FormattedInput {
  std::string text;
  std::optional<Tensor> image;
};

// "[IMG] Instruct: {definition}\nQuery: {text}" with the image segment only
// for image-bearing queries; without instruction only the raw content.
FormattedInput format_query(const TaskSpec& task, const std::optional<std::string>& text,
                            const std::optional<Tensor>& image, bool with_instruction);

// Target side: the task's target instruction (when set) ahead of the raw
// content, same image handling as queries.
FormattedInput format_target(const TaskSpec& task, const std::optional<std::string>& text,
                             const std::optional<Tensor>& image);

}  // namespace emforge
