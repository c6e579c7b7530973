// SPDX-License-Identifier: Apache-2.0
#include "emforge/config.hpp"

#include <fstream>
#include <nlohmann/json.hpp>

namespace emforge::cli {
namespace {

template <class T>
T get(const nlohmann::json& value, const std::string& key) {
  if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
    if (!value.is_number_unsigned() && !(value.is_number_integer() && value.get<std::int64_t>() >= 0)) throw ConfigError("config key '" + key + "': expected a non-negative integer");
  }
  try {
    return value.get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.empty() || path.is_absolute() || base.empty() ? path : base / path;
}

void require_object(const nlohmann::json& j, const std::string& what) {
  if (!j.is_object()) throw ConfigError("config: '" + what + "' must be an object");
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  train.validate();
}

RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  require_object(j, "<root>");
  RunConfig c;
  for (const auto& [section, body] : j.items()) {
    if (section == "model") {
      c.model = model_config_from_json(body);
    } else if (section == "train") {
      require_object(body, "train");
      for (const auto& [key, value] : body.items()) {
        const std::string k = "train." + key;
        if (key == "batch_size") c.train.batch_size = get<std::size_t>(value, k);
        else if (key == "sub_batch_size") c.train.sub_batch_size = get<std::size_t>(value, k);
        else if (key == "steps") c.train.steps = get<std::size_t>(value, k);
        else if (key == "lr") c.train.lr = get<double>(value, k);
        else if (key == "temperature") c.train.temperature = get<double>(value, k);
        else if (key == "seed") c.train.seed = get<std::uint64_t>(value, k);
        else if (key == "with_instructions") c.train.with_instructions = get<bool>(value, k);
        else if (key == "dtype") c.dtype = dtype_from_string(get<std::string>(value, k));
        else throw ConfigError("config: unknown key '" + k + "'");
      }
    } else if (section == "data") {
      require_object(body, "data");
      for (const auto& [key, value] : body.items()) {
        const std::string k = "data." + key;
        if (key == "train_manifest") c.train_manifest = resolve(base_dir, get<std::string>(value, k));
        else if (key == "task_registry") c.task_registry = resolve(base_dir, get<std::string>(value, k));
        else throw ConfigError("config: unknown key '" + k + "'");
      }
    } else if (section == "eval") {
      require_object(body, "eval");
      for (const auto& [key, value] : body.items()) {
        const std::string k = "eval." + key;
        if (key == "manifest") c.eval_manifest = resolve(base_dir, get<std::string>(value, k));
        else if (key == "report_path") c.report_path = resolve(base_dir, get<std::string>(value, k));
        else if (key == "with_instructions") c.eval_with_instructions = get<bool>(value, k);
        else throw ConfigError("config: unknown key '" + k + "'");
      }
    } else {
      throw ConfigError("config: unknown section '" + section + "'");
    }
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return parse_run_config(j, path.parent_path());
}

nlohmann::json to_json(const RunConfig& c) {
  return {{"model", emforge::to_json(c.model)},
          {"train",
           {{"batch_size", c.train.batch_size},
            {"sub_batch_size", c.train.sub_batch_size},
            {"steps", c.train.steps},
            {"lr", c.train.lr},
            {"temperature", c.train.temperature},
            {"seed", c.train.seed},
            {"with_instructions", c.train.with_instructions},
            {"dtype", to_string(c.dtype)}}},
          {"data", {{"train_manifest", c.train_manifest.string()}, {"task_registry", c.task_registry.string()}}},
          {"eval",
           {{"manifest", c.eval_manifest.string()},
            {"report_path", c.report_path.string()},
            {"with_instructions", c.eval_with_instructions}}}};
}

}  // namespace emforge::cli
