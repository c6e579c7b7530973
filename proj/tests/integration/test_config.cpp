#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include "emforge/config.hpp"
#include "emforge/error.hpp"
#include "oracles.hpp"

namespace emforge::cli {
namespace {

nlohmann::json minimal() {
  return {{"model", {{"hidden_dim", 16}, {"layers", 1}, {"heads", 2}}},
          {"train", {{"batch_size", 8}, {"sub_batch_size", 4}, {"steps", 3}, {"dtype", "f64"}}},
          {"data", {{"train_manifest", "data/manifest.jsonl"}}},
          {"eval", {{"manifest", "/abs/manifest.jsonl"}, {"report_path", "out/report.json"}}}};
}

TEST(RunConfig, ParsesSectionsAndResolvesPaths) {
  const RunConfig c = parse_run_config(minimal(), "/base/dir");
  EXPECT_EQ(c.model.hidden_dim, 16u);
  EXPECT_EQ(c.model.layers, 1u);
  EXPECT_EQ(c.model.vocab_size, ModelConfig{}.vocab_size);
  EXPECT_EQ(c.train.batch_size, 8u);
  EXPECT_EQ(c.train.sub_batch_size, 4u);
  EXPECT_EQ(c.train.temperature, 0.02);
  EXPECT_EQ(c.dtype, DType::f64);
  EXPECT_EQ(c.train_manifest, std::filesystem::path("/base/dir/data/manifest.jsonl"));
  EXPECT_EQ(c.eval_manifest, std::filesystem::path("/abs/manifest.jsonl"));
  EXPECT_EQ(c.report_path, std::filesystem::path("/base/dir/out/report.json"));
  EXPECT_TRUE(c.task_registry.empty());
}

TEST(RunConfig, JsonRoundTrip) {
  const RunConfig c = parse_run_config(minimal(), "/base");
  const RunConfig again = parse_run_config(to_json(c), "/elsewhere");
  EXPECT_EQ(to_json(again), to_json(c));
}

TEST(RunConfig, UnknownKeysAreErrors) {
  for (const char* section : {"model", "train", "data", "eval"}) {
    nlohmann::json j = minimal();
    j[section]["bogus"] = 1;
    try {
      parse_run_config(j, "/");
      ADD_FAILURE() << section;
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find("bogus"), std::string::npos) << e.what();
    }
  }
  nlohmann::json j = minimal();
  j["optimizer"] = nlohmann::json::object();
  EXPECT_THROW(parse_run_config(j, "/"), ConfigError);
}

TEST(RunConfig, BadValues) {
  auto with = [](const char* section, const char* key, nlohmann::json v) {
    nlohmann::json j = minimal();
    j[section][key] = v;
    return j;
  };
  EXPECT_THROW(parse_run_config(with("train", "steps", -1), "/"), ConfigError);
  EXPECT_THROW(parse_run_config(with("train", "lr", "fast"), "/"), ConfigError);
  EXPECT_THROW(parse_run_config(with("train", "dtype", "f16"), "/"), Error);
  EXPECT_THROW(parse_run_config(with("train", "sub_batch_size", 9), "/"), ConfigError);
  EXPECT_THROW(parse_run_config(with("train", "temperature", 0.0), "/"), ConfigError);
  EXPECT_THROW(parse_run_config(with("model", "heads", 3), "/"), ConfigError);
  EXPECT_THROW(parse_run_config(nlohmann::json::array(), "/"), ConfigError);
}

TEST(RunConfig, LoadFromFile) {
  testing::TempDir dir;
  testing::write_file(dir / "run.json", minimal().dump());
  const RunConfig c = load_run_config(dir / "run.json");
  EXPECT_EQ(c.train_manifest, dir / "data/manifest.jsonl");
  testing::write_file(dir / "broken.json", "{");
  EXPECT_THROW(load_run_config(dir / "broken.json"), ConfigError);
  EXPECT_THROW(load_run_config(dir / "absent.json"), ConfigError);
}

}  // namespace
}  // namespace emforge::cli
