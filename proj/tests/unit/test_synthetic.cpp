#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "emforge/serialize.hpp"
#include "emforge/synthetic.hpp"
#include "oracles.hpp"

namespace emforge {
namespace {

double sq_distance(const Tensor& a, const Tensor& b) {
  const auto x = a.to_vector(), y = b.to_vector();
  if (x.size() != y.size()) return std::numeric_limits<double>::infinity();
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
  return s;
}

template <class Score>
std::size_t best_candidate(const ExampleRecord& r, Score score) {
  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < r.candidates.size(); ++j) {
    const double s = score(r.candidates[j]);
    if (s > best_score) {
      best_score = s;
      best = j;
    }
  }
  return best;
}

std::size_t nearest_color(const std::vector<synth::Color>& colors, double level) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < colors.size(); ++c) {
    if (std::abs(colors[c].level - level) < std::abs(colors[best].level - level)) best = c;
  }
  return best;
}

// Mean pixel of the region [r0, r0 + h) x [c0, c0 + w) of a [1 x s x s] image.
double region_mean(const Tensor& image, std::size_t r0, std::size_t c0, std::size_t h, std::size_t w) {
  const std::size_t s = image.dim(2);
  double total = 0;
  for (std::size_t r = r0; r < r0 + h; ++r)
    for (std::size_t c = c0; c < c0 + w; ++c) total += image.at(r * s + c);
  return total / static_cast<double>(h * w);
}

std::size_t quadrant_index(const std::string& text) {
  for (std::size_t q = 0; q < 4; ++q) {
    const std::string name = synth::kQuadrants[q];
    // Longest names first would matter only for prefixes; "top left" vs "top right" are disjoint.
    if (text.find(name) != std::string::npos) return q;
  }
  throw std::runtime_error("no quadrant in '" + text + "'");
}

Tensor crop(const Tensor& image, std::size_t q) {
  const std::size_t s = image.dim(2), b = s / 2, r0 = (q / 2) * b, c0 = (q % 2) * b;
  std::vector<double> px;
  for (std::size_t r = 0; r < b; ++r)
    for (std::size_t c = 0; c < b; ++c) px.push_back(image.at((r0 + r) * s + c0 + c));
  return Tensor::from_values({1, b, b}, px, DType::f32);
}

Tensor render_caption(const std::string& caption, const SyntheticSpec& spec) {
  const auto names = synth::texture_names(spec.ood);
  std::istringstream words(caption);
  std::string w;
  const std::size_t b = spec.image_size / 2, s = spec.image_size;
  std::vector<double> px(s * s, 0.0);
  for (std::size_t q = 0; q < 4 && (words >> w); ++q) {
    const auto it = std::find(names.begin(), names.end(), w);
    if (it == names.end()) return Tensor::zeros({1, 1, 1}, DType::f32);
    const Tensor block = synth::texture_block(static_cast<std::size_t>(it - names.begin()), b, spec.ood);
    const std::size_t r0 = (q / 2) * b, c0 = (q % 2) * b;
    for (std::size_t r = 0; r < b; ++r)
      for (std::size_t c = 0; c < b; ++c) px[(r0 + r) * s + c0 + c] = block.at(r * b + c);
  }
  return Tensor::from_values({1, s, s}, px, DType::f32);
}

// Brute-force lookup of the generator's mapping from query to target.
std::size_t oracle(const ExampleRecord& r, const SyntheticDataset& data, const SyntheticSpec& spec) {
  const TaskSpec& task = data.tasks.at(r.task_id);
  auto image = [&](const std::string& rel) { return data.images.at(rel); };
  const auto colors = synth::palette(spec.ood);
  if (r.task_id.rfind("pair_", 0) == 0) {
    const Tensor q = image(*r.query.image);
    const std::size_t s = q.dim(2);
    const bool left = r.task_id.rfind("pair_left", 0) == 0;
    const std::string answer = colors[nearest_color(colors, region_mean(q, 0, left ? 0 : s / 2, s, s / 2))].name;
    return best_candidate(r, [&](const Content& c) { return c.text == answer ? 1.0 : 0.0; });
  }
  switch (task.meta_task) {
    case MetaTask::classification: {
      const auto names = synth::class_names(spec);
      const Tensor q = image(*r.query.image);
      std::size_t label = 0;
      for (std::size_t j = 1; j < names.size(); ++j) {
        if (sq_distance(q, synth::class_prototype(spec, j)) < sq_distance(q, synth::class_prototype(spec, label))) label = j;
      }
      return best_candidate(r, [&](const Content& c) { return c.text == names[label] ? 1.0 : 0.0; });
    }
    case MetaTask::vqa: {
      const Tensor q = image(*r.query.image);
      const std::size_t quad = quadrant_index(*r.query.text), b = q.dim(2) / 2;
      const double level = region_mean(q, (quad / 2) * b, (quad % 2) * b, b, b);
      const std::string answer = colors[nearest_color(colors, level)].name;
      return best_candidate(r, [&](const Content& c) { return c.text == answer ? 1.0 : 0.0; });
    }
    case MetaTask::retrieval: {
      if (r.query.text) {
        const Tensor want = render_caption(*r.query.text, spec);
        return best_candidate(r, [&](const Content& c) { return -sq_distance(image(*c.image), want); });
      }
      const Tensor q = image(*r.query.image);
      return best_candidate(r, [&](const Content& c) { return -sq_distance(q, render_caption(*c.text, spec)); });
    }
    case MetaTask::grounding: {
      const Tensor want = crop(image(*r.query.image), quadrant_index(*r.query.text));
      return best_candidate(r, [&](const Content& c) { return -sq_distance(image(*c.image), want); });
    }
  }
  return 0;
}

SyntheticSpec small_spec(MetaTask m, bool ood = false) {
  SyntheticSpec s;
  s.meta_task = m;
  s.n_train = 60;
  s.n_eval = 80;
  s.n_candidates = 64;
  s.seed = 5;
  s.ood = ood;
  return s;
}

std::vector<SyntheticSpec> all_specs() {
  std::vector<SyntheticSpec> out;
  for (bool ood : {false, true}) {
    for (MetaTask m : kAllMetaTasks) out.push_back(small_spec(m, ood));
    SyntheticSpec i2t = small_spec(MetaTask::retrieval, ood);
    i2t.direction = Direction::image_to_text;
    out.push_back(i2t);
  }
  return out;
}

TEST(Synthetic, OracleSolvesEveryGenerator) {
  for (const auto& spec : all_specs()) {
    const SyntheticDataset data = generate_synthetic(spec);
    std::size_t pools = 0, correct = 0;
    for (const auto& r : data.records) {
      if (r.split != Split::eval) continue;
      ++pools;
      correct += oracle(r, data, spec) == *r.label_index;
    }
    EXPECT_EQ(pools, spec.n_eval);
    EXPECT_EQ(correct, pools) << data.tasks.tasks()[0].task_id;
  }
}

TEST(Synthetic, OracleSolvesInstructionPair) {
  SyntheticSpec spec = small_spec(MetaTask::vqa);
  spec.n_candidates = 16;
  const SyntheticDataset data = generate_instruction_pair(spec);
  std::size_t pools = 0;
  for (const auto& r : data.records) {
    if (r.split != Split::eval) continue;
    ++pools;
    EXPECT_EQ(oracle(r, data, spec), *r.label_index) << r.id;
  }
  EXPECT_EQ(pools, 2 * spec.n_eval);
}

TEST(Synthetic, InstructionPairQueriesAreShared) {
  SyntheticSpec spec = small_spec(MetaTask::vqa);
  spec.n_candidates = 16;
  const SyntheticDataset data = generate_instruction_pair(spec);
  std::map<std::string, std::set<std::string>> answers;
  for (const auto& r : data.records) answers[*r.query.image].insert(*r.positive->text);
  for (const auto& [img, a] : answers) EXPECT_EQ(a.size(), 2u) << img;
  EXPECT_EQ(data.tasks.tasks().size(), 2u);
}

TEST(Synthetic, EvalPoolsHaveRequestedSizeAndValidLabels) {
  for (const auto& base : all_specs()) {
    SyntheticSpec spec = base;
    spec.n_eval = 200;
    const SyntheticDataset data = generate_synthetic(spec);
    for (const auto& r : data.records) {
      EXPECT_NO_THROW(validate_record(r, data.tasks));
      ASSERT_TRUE(r.positive.has_value());
      if (r.split != Split::eval) continue;
      ASSERT_EQ(r.candidates.size(), 64u) << r.id;
      ASSERT_TRUE(r.label_index.has_value());
      EXPECT_EQ(r.candidates[*r.label_index], *r.positive) << r.id;
      std::set<Content> distinct(r.candidates.begin(), r.candidates.end());
      EXPECT_EQ(distinct.size(), r.candidates.size()) << r.id;
    }
  }
}

std::string content_key(const Content& c, const SyntheticDataset& data) {
  std::string key = c.text.value_or("") + '\0';
  if (c.image) {
    const auto bytes = encode_tensor(data.images.at(*c.image));
    key.append(bytes.begin(), bytes.end());
  }
  return key;
}

TEST(Synthetic, EvalQueriesNeverAppearInTraining) {
  for (const auto& spec : all_specs()) {
    const SyntheticDataset data = generate_synthetic(spec);
    std::set<std::string> train;
    for (const auto& r : data.records) {
      if (r.split == Split::train) train.insert(content_key(r.query, data));
    }
    for (const auto& r : data.records) {
      if (r.split == Split::eval) EXPECT_EQ(train.count(content_key(r.query, data)), 0u) << r.id;
    }
  }
}

TEST(Synthetic, SameSeedWritesIdenticalFiles) {
  testing::TempDir a, b;
  const SyntheticSpec spec = small_spec(MetaTask::grounding);
  write_synthetic(generate_synthetic(spec), a.path());
  write_synthetic(generate_synthetic(spec), b.path());
  EXPECT_EQ(testing::read_file(a / kManifestFile), testing::read_file(b / kManifestFile));
  EXPECT_EQ(testing::read_file(a / kTaskFile), testing::read_file(b / kTaskFile));
  for (const auto& entry : std::filesystem::directory_iterator(a / "images")) {
    EXPECT_EQ(testing::read_file(entry.path()), testing::read_file(b / "images" / entry.path().filename()));
  }
  SyntheticSpec other = spec;
  other.seed = 6;
  testing::TempDir c;
  write_synthetic(generate_synthetic(other), c.path());
  EXPECT_NE(testing::read_file(a / kManifestFile), testing::read_file(c / kManifestFile));
}

TEST(Synthetic, OneImageFilePerRecordForRetrieval) {
  testing::TempDir dir;
  const SyntheticSpec spec = small_spec(MetaTask::retrieval);
  write_synthetic(generate_synthetic(spec), dir.path());
  const auto files = std::distance(std::filesystem::directory_iterator(dir / "images"), {});
  EXPECT_EQ(static_cast<std::size_t>(files), spec.n_train + spec.n_eval);
  const Dataset ds = load_manifest(dir / kManifestFile, TaskRegistry::load(dir / kTaskFile));
  EXPECT_EQ(ds.records.size(), spec.n_train + spec.n_eval);
}

TEST(Synthetic, OodVariantsShiftVocabulary) {
  const auto ind = synth::texture_names(false), ood = synth::texture_names(true);
  for (const auto& w : ood) EXPECT_EQ(std::count(ind.begin(), ind.end(), w), 0) << w;
  const auto pi = synth::palette(false), po = synth::palette(true);
  for (const auto& c : po) {
    EXPECT_TRUE(std::none_of(pi.begin(), pi.end(), [&](const synth::Color& x) { return x.name == c.name; }));
  }
  const SyntheticDataset data = generate_synthetic(small_spec(MetaTask::vqa, true));
  EXPECT_EQ(data.tasks.tasks()[0].task_id, "synth_vqa_ood");
  EXPECT_TRUE(data.tasks.tasks()[0].ood);
}

TEST(Synthetic, SpecValidation) {
  SyntheticSpec s = small_spec(MetaTask::classification);
  s.n_classes = 10;
  EXPECT_THROW(generate_synthetic(s), ConfigError);
  s = small_spec(MetaTask::retrieval);
  s.n_eval = 10;
  EXPECT_THROW(generate_synthetic(s), ConfigError);
  s = small_spec(MetaTask::vqa);
  s.n_candidates = 1;
  EXPECT_THROW(generate_synthetic(s), ConfigError);
  s = small_spec(MetaTask::vqa);
  s.image_size = 7;
  EXPECT_THROW(generate_synthetic(s), ConfigError);
  EXPECT_THROW(direction_from_string("sideways"), ConfigError);
}

TEST(Synthetic, PseudoWordsAreDistinct) {
  std::set<std::string> seen;
  for (std::size_t i = 0; i < 4900; ++i) seen.insert(synth::pseudo_word(i));
  EXPECT_EQ(seen.size(), 4900u);
}

}  // namespace
}  // namespace emforge
