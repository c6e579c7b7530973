#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "emforge/dataset.hpp"
#include "emforge/serialize.hpp"
#include "oracles.hpp"

namespace emforge {
namespace {

TaskRegistry registry() {
  TaskRegistry r;
  r.add({"cap", MetaTask::retrieval, "Find the image.", Modality::text, Modality::image, false, std::nullopt});
  r.add({"cls", MetaTask::classification, "Classify.", Modality::image, Modality::text, false, std::nullopt});
  return r;
}

ExampleRecord train_record(const std::string& id, const std::string& task = "cap") {
  ExampleRecord r;
  r.id = id;
  r.task_id = task;
  r.split = Split::train;
  if (task == "cap") {
    r.query = {"a caption " + id, std::nullopt};
    r.positive = Content{std::nullopt, "images/" + id + ".emt"};
  } else {
    r.query = {std::nullopt, "images/" + id + ".emt"};
    r.positive = Content{"label", std::nullopt};
  }
  return r;
}

ExampleRecord eval_record(const std::string& id) {
  ExampleRecord r;
  r.id = id;
  r.task_id = "cls";
  r.split = Split::eval;
  r.query = {std::nullopt, "images/q.emt"};
  r.candidates = {{"dog", std::nullopt}, {"cat", std::nullopt}, {"bus", std::nullopt}};
  r.label_index = 1;
  r.positive = r.candidates[1];
  return r;
}

void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path);
  for (const auto& l : lines) out << l << "\n";
}

TEST(Manifest, RoundTripThreeRecords) {
  testing::TempDir dir;
  const std::vector<ExampleRecord> records{train_record("a"), train_record("b", "cls"), eval_record("c")};
  save_manifest(dir / "m.jsonl", records);
  const Dataset ds = load_manifest(dir / "m.jsonl", registry());
  EXPECT_EQ(ds.records, records);
  EXPECT_EQ(ds.root, dir.path());
  EXPECT_EQ(ds.indices(Split::train), (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(ds.task_ids(Split::train), (std::vector<std::string>{"cap", "cls"}));

  save_manifest(dir / "again.jsonl", ds.records);
  EXPECT_EQ(testing::read_file(dir / "again.jsonl"), testing::read_file(dir / "m.jsonl"));
}

TEST(Manifest, MissingPositiveNamesTheRecord) {
  testing::TempDir dir;
  nlohmann::json j = to_json(train_record("lonely"));
  j.erase("positive");
  write_lines(dir / "m.jsonl", {to_json(train_record("ok")).dump(), j.dump()});
  try {
    load_manifest(dir / "m.jsonl", registry());
    FAIL();
  } catch (const DataError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("lonely"), std::string::npos) << what;
    EXPECT_NE(what.find(":2:"), std::string::npos) << what;
  }
}

TEST(Manifest, MalformedLineReportsLineNumber) {
  testing::TempDir dir;
  write_lines(dir / "m.jsonl", {to_json(train_record("a")).dump(), "", "{oops", to_json(train_record("b")).dump()});
  try {
    load_manifest(dir / "m.jsonl", registry());
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
  }
}

TEST(Manifest, ValidationErrors) {
  const TaskRegistry tasks = registry();
  ExampleRecord unknown = train_record("u");
  unknown.task_id = "nope";
  EXPECT_THROW(validate_record(unknown, tasks), DataError);

  ExampleRecord wrong_modality = train_record("w");
  wrong_modality.query = {std::nullopt, "images/x.emt"};
  EXPECT_THROW(validate_record(wrong_modality, tasks), DataError);

  ExampleRecord few = eval_record("f");
  few.candidates.resize(1);
  few.label_index = 0;
  few.positive = few.candidates[0];
  EXPECT_THROW(validate_record(few, tasks), DataError);

  ExampleRecord bad_label = eval_record("l");
  bad_label.label_index = 3;
  EXPECT_THROW(validate_record(bad_label, tasks), DataError);

  ExampleRecord mismatch = eval_record("m");
  mismatch.positive = mismatch.candidates[0];
  EXPECT_THROW(validate_record(mismatch, tasks), DataError);

  nlohmann::json extra = to_json(train_record("x"));
  extra["weight"] = 2;
  EXPECT_THROW(record_from_json(extra), DataError);
}

TEST(Manifest, DuplicateIdsAreRejected) {
  testing::TempDir dir;
  save_manifest(dir / "m.jsonl", {train_record("a"), train_record("a")});
  EXPECT_THROW(load_manifest(dir / "m.jsonl", registry()), DataError);
  EXPECT_THROW(load_manifest(dir / "absent.jsonl", registry()), DataError);
}

TEST(Manifest, TrainingCapSamplesDeterministically) {
  testing::TempDir dir;
  std::vector<ExampleRecord> records;
  for (std::size_t i = 0; i < 60000; ++i) records.push_back(train_record("r" + std::to_string(i)));
  records.push_back(eval_record("e"));
  save_manifest(dir / "m.jsonl", records);

  const Dataset a = load_manifest(dir / "m.jsonl", registry(), {50000, 7});
  const Dataset b = load_manifest(dir / "m.jsonl", registry(), {50000, 7});
  const Dataset c = load_manifest(dir / "m.jsonl", registry(), {50000, 8});
  EXPECT_EQ(a.indices(Split::train).size(), 50000u);
  EXPECT_EQ(a.indices(Split::eval).size(), 1u);
  EXPECT_EQ(a.records, b.records);
  EXPECT_NE(a.records, c.records);
  // Kept records stay in file order.
  std::size_t last = 0;
  for (std::size_t i : a.indices(Split::train)) {
    const std::size_t n = std::stoul(a.records[i].id.substr(1));
    if (i > 0) EXPECT_GT(n, last);
    last = n;
  }
}

TEST(Manifest, SmallCap) {
  testing::TempDir dir;
  std::vector<ExampleRecord> records;
  for (std::size_t i = 0; i < 10; ++i) records.push_back(train_record("a" + std::to_string(i)));
  for (std::size_t i = 0; i < 3; ++i) records.push_back(train_record("b" + std::to_string(i), "cls"));
  save_manifest(dir / "m.jsonl", records);
  const Dataset ds = load_manifest(dir / "m.jsonl", registry(), {4, 1});
  std::map<std::string, int> per_task;
  for (const auto& r : ds.records) ++per_task[r.task_id];
  EXPECT_EQ(per_task["cap"], 4);
  EXPECT_EQ(per_task["cls"], 3);
}

TEST(ImageStore, LoadsAndChecksRank) {
  testing::TempDir dir;
  std::filesystem::create_directories(dir / "images");
  save_tensor(dir / "images/ok.emt", Tensor::zeros({1, 4, 4}, DType::f32));
  save_tensor(dir / "images/flat.emt", Tensor::zeros({16}, DType::f32));
  ImageStore store(dir.path());
  EXPECT_EQ(store.get("images/ok.emt").shape(), (Shape{1, 4, 4}));
  EXPECT_THROW(store.get("images/flat.emt"), DataError);
  EXPECT_THROW(store.get("images/none.emt"), DataError);
}

Dataset two_task_dataset(std::size_t per_task) {
  Dataset ds;
  for (std::size_t i = 0; i < per_task; ++i) ds.records.push_back(train_record("a" + std::to_string(i)));
  for (std::size_t i = 0; i < per_task; ++i) ds.records.push_back(train_record("b" + std::to_string(i), "cls"));
  ds.records.push_back(eval_record("e"));
  return ds;
}

TEST(SampleBatch, DeterministicPerSeedAndStep) {
  const Dataset ds = two_task_dataset(50);
  EXPECT_EQ(sample_batch(ds, 16, 3, 9), sample_batch(ds, 16, 3, 9));
  EXPECT_NE(sample_batch(ds, 16, 3, 9), sample_batch(ds, 16, 4, 9));
  EXPECT_NE(sample_batch(ds, 16, 3, 9), sample_batch(ds, 16, 3, 10));
  for (std::size_t i : sample_batch(ds, 16, 0, 9)) EXPECT_EQ(ds.records[i].split, Split::train);
}

TEST(SampleBatch, EpochCoversEveryRecordOnce) {
  Dataset ds;
  for (std::size_t i = 0; i < 48; ++i) ds.records.push_back(train_record("r" + std::to_string(i)));
  std::vector<std::size_t> seen;
  for (std::uint64_t step = 0; step < 6; ++step) {
    const auto batch = sample_batch(ds, 8, step, 3);
    seen.insert(seen.end(), batch.begin(), batch.end());
  }
  std::sort(seen.begin(), seen.end());
  std::vector<std::size_t> all(48);
  std::iota(all.begin(), all.end(), 0);
  EXPECT_EQ(seen, all);
}

TEST(SampleBatch, TasksShareBatchesEvenly) {
  const Dataset ds = two_task_dataset(40);
  std::size_t first = 0, total = 0;
  for (std::uint64_t step = 0; step < 1000; ++step) {
    for (std::size_t i : sample_batch(ds, 7, step, 5)) {
      first += ds.records[i].task_id == "cap";
      ++total;
    }
  }
  EXPECT_NEAR(static_cast<double>(first) / static_cast<double>(total), 0.5, 0.02);
}

TEST(SampleBatch, OversizedBatchIsAnError) {
  const Dataset ds = two_task_dataset(3);
  EXPECT_THROW(sample_batch(ds, 10, 0, 1), DataError);
  EXPECT_THROW(sample_batch(Dataset{}, 2, 0, 1), DataError);
}

}  // namespace
}  // namespace emforge
