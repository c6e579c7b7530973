// SPDX-License-Identifier: Apache-2.0
#include "emforge/instruction.hpp"

#include <fstream>
#include <nlohmann/json.hpp>

#include "emforge/tokenizer.hpp"

namespace emforge {

std::string to_string(MetaTask task) {
  switch (task) {
    case MetaTask::classification: return "classification";
    case MetaTask::vqa: return "vqa";
    case MetaTask::retrieval: return "retrieval";
    case MetaTask::grounding: return "grounding";
  }
  return "?";
}

MetaTask meta_task_from_string(const std::string& name) {
  for (auto t : kAllMetaTasks) {
    if (to_string(t) == name) return t;
  }
  throw ConfigError("unknown meta_task '" + name + "'");
}

std::string to_string(Modality m) {
  switch (m) {
    case Modality::text: return "T";
    case Modality::image: return "I";
    case Modality::image_text: return "I+T";
  }
  return "?";
}

Modality modality_from_string(const std::string& name) {
  if (name == "T") return Modality::text;
  if (name == "I") return Modality::image;
  if (name == "I+T") return Modality::image_text;
  throw ConfigError("unknown modality '" + name + "' (expected T, I or I+T)");
}

void TaskSpec::validate() const {
  if (task_id.empty()) throw ConfigError("task_id must be non-empty");
  if (definition.empty()) throw ConfigError("task '" + task_id + "': definition must be non-empty");
}

nlohmann::json to_json(const TaskSpec& t) {
  nlohmann::json j{{"task_id", t.task_id},
                   {"meta_task", to_string(t.meta_task)},
                   {"definition", t.definition},
                   {"query_modality", to_string(t.query_modality)},
                   {"target_modality", to_string(t.target_modality)},
                   {"ood", t.ood}};
  if (t.target_instruction) j["target_instruction"] = *t.target_instruction;
  return j;
}

TaskSpec task_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("task spec must be a JSON object");
  TaskSpec t;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "task_id") t.task_id = value.get<std::string>();
      else if (key == "meta_task") t.meta_task = meta_task_from_string(value.get<std::string>());
      else if (key == "definition") t.definition = value.get<std::string>();
      else if (key == "query_modality") t.query_modality = modality_from_string(value.get<std::string>());
      else if (key == "target_modality") t.target_modality = modality_from_string(value.get<std::string>());
      else if (key == "ood") t.ood = value.get<bool>();
      else if (key == "target_instruction") {
        if (!value.is_null()) t.target_instruction = value.get<std::string>();
      } else {
        throw ConfigError("task spec: unknown key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("task spec: ") + e.what());
  }
  t.validate();
  return t;
}

void TaskRegistry::add(TaskSpec task) {
  task.validate();
  if (contains(task.task_id)) throw ConfigError("duplicate task id '" + task.task_id + "'");
  tasks_.push_back(std::move(task));
}

const TaskSpec& TaskRegistry::at(const std::string& task_id) const {
  for (const auto& t : tasks_) {
    if (t.task_id == task_id) return t;
  }
  throw DataError("unknown task_id '" + task_id + "'");
}

bool TaskRegistry::contains(const std::string& task_id) const {
  for (const auto& t : tasks_) {
    if (t.task_id == task_id) return true;
  }
  return false;
}

void TaskRegistry::merge(const TaskRegistry& other) {
  for (const auto& t : other.tasks()) {
    if (contains(t.task_id)) {
      if (!(at(t.task_id) == t)) throw ConfigError("conflicting definitions for task '" + t.task_id + "'");
      continue;
    }
    tasks_.push_back(t);
  }
}

nlohmann::json TaskRegistry::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& t : tasks_) arr.push_back(emforge::to_json(t));
  return arr;
}

TaskRegistry TaskRegistry::from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw ConfigError("task registry must be a JSON array");
  TaskRegistry r;
  for (const auto& item : j) r.add(task_from_json(item));
  return r;
}

void TaskRegistry::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write task registry " + path.string());
  out << to_json().dump(2) << '\n';
}

TaskRegistry TaskRegistry::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open task registry " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("task registry " + path.string() + ": " + e.what());
  }
}

TaskRegistry default_registry() {
  TaskRegistry r;
  r.add({"synth_classification", MetaTask::classification, "Identify the object shown in the image.", Modality::image,
         Modality::text, false, std::nullopt});
  r.add({"synth_vqa", MetaTask::vqa, "Represent the given image with the following question.", Modality::image_text,
         Modality::text, false, std::nullopt});
  r.add({"synth_retrieval", MetaTask::retrieval, "Find an image that matches the given caption.", Modality::text,
         Modality::image, false, std::nullopt});
  r.add({"synth_grounding", MetaTask::grounding, "Select the portion of the image that the query names.",
         Modality::image_text, Modality::image, false, std::string("Represent the given cropped image of the object.")});
  return r;
}

namespace {

void check_modality(const TaskSpec& task, Modality expected, const std::optional<std::string>& text,
                    const std::optional<Tensor>& image, const char* side) {
  const bool has_text = text.has_value();
  const bool has_image = image.has_value();
  bool ok = false;
  switch (expected) {
    case Modality::text: ok = has_text && !has_image; break;
    case Modality::image: ok = has_image && !has_text; break;
    case Modality::image_text: ok = has_image && has_text; break;
  }
  if (!ok) {
    throw DataError(std::string(side) + " modality mismatch for task '" + task.task_id + "': expected " +
                    to_string(expected) + ", got " + (has_image ? (has_text ? "I+T" : "I") : (has_text ? "T" : "none")));
  }
}

std::string image_prefix(bool has_image) { return has_image ? std::string(kImageMarker) + " " : std::string(); }

}  // namespace

FormattedInput format_query(const TaskSpec& task, const std::optional<std::string>& text,
                            const std::optional<Tensor>& image, bool with_instruction) {
  check_modality(task, task.query_modality, text, image, "query");
  const std::string body = text.value_or("");
  FormattedInput out{{}, image};
  if (with_instruction) {
    out.text = image_prefix(image.has_value()) + "Instruct: " + task.definition + "\nQuery: " + body;
  } else if (image) {
    out.text = body.empty() ? std::string(kImageMarker) : image_prefix(true) + body;
  } else {
    out.text = body;
  }
  return out;
}

FormattedInput format_target(const TaskSpec& task, const std::optional<std::string>& text,
                             const std::optional<Tensor>& image) {
  check_modality(task, task.target_modality, text, image, "target");
  std::string body;
  if (task.target_instruction) {
    body = *task.target_instruction;
    if (text) body += "\n" + *text;
  } else {
    body = text.value_or("");
  }
  FormattedInput out{{}, image};
  if (image) {
    out.text = body.empty() ? std::string(kImageMarker) : image_prefix(true) + body;
  } else {
    out.text = body;
  }
  return out;
}

}  // namespace emforge
