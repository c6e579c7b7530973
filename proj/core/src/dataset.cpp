// SPDX-License-Identifier: Apache-2.0
#include "emforge/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <nlohmann/json.hpp>

#include "emforge/rng.hpp"
#include "emforge/serialize.hpp"

namespace emforge {

std::string to_string(Split split) { return split == Split::train ? "train" : "eval"; }

Modality Content::modality() const {
  if (text && image) return Modality::image_text;
  if (image) return Modality::image;
  if (text) return Modality::text;
  throw DataError("content has neither text nor image");
}

bool Content::operator<(const Content& o) const {
  return std::tie(text, image) < std::tie(o.text, o.image);
}

namespace {

nlohmann::json content_json(const Content& c) {
  nlohmann::json j = nlohmann::json::object();
  if (c.text) j["text"] = *c.text;
  if (c.image) j["image"] = *c.image;
  return j;
}

Content content_from_json(const nlohmann::json& j, const std::string& where) {
  if (!j.is_object()) throw DataError(where + ": expected an object");
  Content c;
  for (const auto& [key, value] : j.items()) {
    if (key == "text") c.text = value.get<std::string>();
    else if (key == "image") c.image = value.get<std::string>();
    else throw DataError(where + ": unknown key '" + key + "'");
  }
  return c;
}

std::vector<Content> content_list(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array()) throw DataError(where + ": expected an array");
  std::vector<Content> out;
  for (const auto& item : j) out.push_back(content_from_json(item, where));
  return out;
}

}  // namespace

nlohmann::json to_json(const ExampleRecord& r) {
  nlohmann::json j{{"id", r.id}, {"task_id", r.task_id}, {"split", to_string(r.split)}, {"query", content_json(r.query)}};
  if (r.positive) j["positive"] = content_json(*r.positive);
  nlohmann::json negs = nlohmann::json::array();
  for (const auto& c : r.hard_negatives) negs.push_back(content_json(c));
  j["hard_negatives"] = negs;
  if (!r.candidates.empty()) {
    nlohmann::json cands = nlohmann::json::array();
    for (const auto& c : r.candidates) cands.push_back(content_json(c));
    j["candidates"] = cands;
  }
  if (r.label_index) j["label_index"] = *r.label_index;
  return j;
}

ExampleRecord record_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw DataError("record must be a JSON object");
  ExampleRecord r;
  bool has_id = false, has_task = false, has_split = false, has_query = false;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "id") {
        r.id = value.get<std::string>();
        has_id = true;
      } else if (key == "task_id") {
        r.task_id = value.get<std::string>();
        has_task = true;
      } else if (key == "split") {
        const auto s = value.get<std::string>();
        if (s == "train") r.split = Split::train;
        else if (s == "eval") r.split = Split::eval;
        else throw DataError("unknown split '" + s + "'");
        has_split = true;
      } else if (key == "query") {
        r.query = content_from_json(value, "query");
        has_query = true;
      } else if (key == "positive") {
        if (!value.is_null()) r.positive = content_from_json(value, "positive");
      } else if (key == "hard_negatives") {
        r.hard_negatives = content_list(value, "hard_negatives");
      } else if (key == "candidates") {
        r.candidates = content_list(value, "candidates");
      } else if (key == "label_index") {
        if (!value.is_null()) r.label_index = value.get<std::size_t>();
      } else {
        throw DataError("unknown key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad field type: ") + e.what());
  }
  if (!has_id || r.id.empty()) throw DataError("record without id");
  if (!has_task) throw DataError("record '" + r.id + "' has no task_id");
  if (!has_split) throw DataError("record '" + r.id + "' has no split");
  if (!has_query) throw DataError("record '" + r.id + "' has no query");
  return r;
}

void validate_record(const ExampleRecord& r, const TaskRegistry& tasks) {
  const std::string who = "record '" + r.id + "'";
  if (!tasks.contains(r.task_id)) throw DataError(who + ": unknown task_id '" + r.task_id + "'");
  const TaskSpec& task = tasks.at(r.task_id);
  auto check = [&](const Content& c, Modality want, const std::string& role) {
    Modality got;
    try {
      got = c.modality();
    } catch (const DataError&) {
      throw DataError(who + ": empty " + role);
    }
    if (got != want) {
      throw DataError(who + ": " + role + " modality " + to_string(got) + " does not match task '" + task.task_id +
                      "' (" + to_string(want) + ")");
    }
  };
  check(r.query, task.query_modality, "query");
  if (r.positive) check(*r.positive, task.target_modality, "positive target");
  for (const auto& c : r.hard_negatives) check(c, task.target_modality, "hard negative");
  for (const auto& c : r.candidates) check(c, task.target_modality, "candidate");
  if (r.split == Split::train) {
    if (!r.positive) throw DataError(who + ": training record without a positive target");
  } else {
    if (r.candidates.size() < 2) throw DataError(who + ": evaluation record needs at least 2 candidates");
    if (!r.label_index || *r.label_index >= r.candidates.size()) throw DataError(who + ": label_index out of range");
    if (r.positive && !(*r.positive == r.candidates[*r.label_index])) {
      throw DataError(who + ": labelled candidate differs from the positive target");
    }
  }
}

std::vector<std::size_t> Dataset::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].split == split) out.push_back(i);
  }
  return out;
}

std::vector<std::string> Dataset::task_ids(Split split) const {
  std::vector<std::string> out;
  for (const auto& r : records) {
    if (r.split == split && std::find(out.begin(), out.end(), r.task_id) == out.end()) out.push_back(r.task_id);
  }
  return out;
}

Dataset load_manifest(const std::filesystem::path& path, const TaskRegistry& tasks, const LoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  Dataset ds;
  ds.root = path.parent_path();
  std::string line;
  std::size_t line_no = 0;
  std::map<std::string, std::size_t> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      ExampleRecord r = record_from_json(nlohmann::json::parse(line));
      validate_record(r, tasks);
      if (!seen.emplace(r.id, line_no).second) throw DataError("duplicate record id '" + r.id + "'");
      ds.records.push_back(std::move(r));
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": malformed JSON: " + e.what());
    } catch (const Error& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }

  // Per-task cap on training records.
  std::vector<bool> keep(ds.records.size(), true);
  const auto task_order = ds.task_ids(Split::train);
  for (std::size_t t = 0; t < task_order.size(); ++t) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
      if (ds.records[i].split == Split::train && ds.records[i].task_id == task_order[t]) members.push_back(i);
    }
    if (members.size() <= options.train_cap) continue;
    Rng rng(Rng::derive(options.seed, {0x636170ULL, t}));
    std::vector<bool> chosen(members.size(), false);
    for (auto k : rng.sample_without_replacement(members.size(), options.train_cap)) chosen[k] = true;
    for (std::size_t k = 0; k < members.size(); ++k) keep[members[k]] = chosen[k];
  }
  std::vector<ExampleRecord> kept;
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    if (keep[i]) kept.push_back(std::move(ds.records[i]));
  }
  ds.records = std::move(kept);
  return ds;
}

void save_manifest(const std::filesystem::path& path, const std::vector<ExampleRecord>& records) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw DataError("cannot write manifest " + path.string());
  for (const auto& r : records) out << to_json(r).dump() << '\n';
  if (!out) throw DataError("write failed for " + path.string());
}

Tensor ImageStore::get(const std::string& relative) const {
  {
    std::lock_guard lock(mutex_);
    if (auto it = cache_.find(relative); it != cache_.end()) return it->second;
  }
  Tensor image;
  try {
    image = load_tensor(root_ / relative);
  } catch (const Error& e) {
    throw DataError("image '" + relative + "': " + e.what());
  }
  if (image.rank() != 3) throw DataError("image '" + relative + "' must have shape [c x h x w]");
  std::lock_guard lock(mutex_);
  return cache_.emplace(relative, image).first->second;
}

std::vector<std::size_t> sample_batch(const Dataset& dataset, std::size_t batch_size, std::uint64_t step,
                                      std::uint64_t seed) {
  const auto tasks = dataset.task_ids(Split::train);
  if (tasks.empty()) throw DataError("sample_batch: no training records");
  if (batch_size == 0) throw ConfigError("sample_batch: batch size must be >= 1");
  const std::size_t n_tasks = tasks.size();
  const std::size_t base = batch_size / n_tasks, extra = batch_size % n_tasks;

  std::vector<std::size_t> batch;
  batch.reserve(batch_size);
  for (std::size_t t = 0; t < n_tasks; ++t) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < dataset.records.size(); ++i) {
      const auto& r = dataset.records[i];
      if (r.split == Split::train && r.task_id == tasks[t]) members.push_back(i);
    }
    // Remainder slot i of step s goes to task (s * extra + i) mod n_tasks.
    const std::uint64_t handed_out = step * extra;
    auto extras_before = [&](std::uint64_t total) -> std::uint64_t {
      return total > t ? (total - t - 1) / n_tasks + 1 : 0;
    };
    const std::uint64_t cursor = step * base + extras_before(handed_out);
    const std::size_t count = base + static_cast<std::size_t>(extras_before(handed_out + extra) - extras_before(handed_out));
    if (count > members.size()) {
      throw DataError("sample_batch: task '" + tasks[t] + "' has " + std::to_string(members.size()) +
                      " records, fewer than its " + std::to_string(count) + " batch slots");
    }
    const std::uint64_t n = members.size();
    std::uint64_t cached_epoch = UINT64_MAX;
    std::vector<std::size_t> perm;
    for (std::uint64_t p = cursor; p < cursor + count; ++p) {
      const std::uint64_t epoch = p / n;
      if (epoch != cached_epoch) {
        perm = members;
        Rng rng(Rng::derive(seed, {0x65706f6368ULL, t, epoch}));
        rng.shuffle(perm);
        cached_epoch = epoch;
      }
      batch.push_back(perm[p % n]);
    }
  }
  return batch;
}

}  // namespace emforge
