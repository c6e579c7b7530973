// SPDX-License-Identifier: Apache-2.0
#include "emforge/synthetic.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "emforge/rng.hpp"
#include "emforge/serialize.hpp"

namespace emforge {

std::string to_string(Direction d) { return d == Direction::text_to_image ? "t2i" : "i2t"; }

Direction direction_from_string(const std::string& name) {
  if (name == "t2i") return Direction::text_to_image;
  if (name == "i2t") return Direction::image_to_text;
  throw ConfigError("unknown retrieval direction '" + name + "' (expected t2i or i2t)");
}

namespace synth {
namespace {

constexpr std::size_t kTextures = 8;
constexpr std::size_t kPatternCount = kTextures * kTextures * kTextures * kTextures;

bool texture_on(std::size_t index, bool ood, std::size_t r, std::size_t c, std::size_t b) {
  const std::size_t h = b / 2;
  if (!ood) {
    switch (index) {
      case 0: return false;
      case 1: return true;
      case 2: return r % 2 == 0;
      case 3: return c % 2 == 0;
      case 4: return (r + c) % 2 == 0;
      case 5: return r == 0 || c == 0 || r == b - 1 || c == b - 1;
      case 6: return r % 2 == 0 && c % 2 == 0;
      case 7: return r == h || c == h;
    }
  } else {
    switch (index) {
      case 0: return r == c;
      case 1: return r + c == b - 1;
      case 2: return r < h;
      case 3: return c < h;
      case 4: return r < h && c < h;
      case 5: return r > 0 && c > 0 && r < b - 1 && c < b - 1;
      case 6: return r == c || r + c == b - 1;
      case 7: return c == 0 || c == b - 1 || r % 2 == 0;
    }
  }
  throw ConfigError("texture index out of range");
}

}  // namespace

std::vector<std::string> texture_names(bool ood) {
  if (ood) return {"diagonal", "slash", "upper", "lefty", "corner", "core", "xmark", "ladder"};
  return {"blank", "solid", "stripes", "bars", "checks", "frame", "dots", "cross"};
}

Tensor texture_block(std::size_t index, std::size_t block, bool ood) {
  std::vector<float> px(block * block);
  for (std::size_t r = 0; r < block; ++r)
    for (std::size_t c = 0; c < block; ++c) px[r * block + c] = texture_on(index, ood, r, c, block) ? 1.0f : 0.0f;
  return make_tensor<float>({1, block, block}, std::move(px));
}

std::vector<Color> palette(bool ood) {
  static const char* ind[] = {"black", "navy", "maroon", "olive", "teal", "gray", "silver", "white"};
  static const char* shifted[] = {"coral", "amber", "jade", "plum", "rust", "azure", "ivory", "onyx"};
  std::vector<Color> out;
  for (std::size_t i = 0; i < 8; ++i) {
    out.push_back(ood ? Color{shifted[i], (static_cast<double>(i) + 0.5) / 8.0}
                      : Color{ind[i], static_cast<double>(i) / 7.0});
  }
  return out;
}

std::string pseudo_word(std::size_t index) {
  static const char consonants[] = "bdfgklmnprstvz";
  static const char vowels[] = "aeiou";
  auto syllable = [](std::size_t k) { return std::string{consonants[k / 5 % 14], vowels[k % 5]}; };
  return syllable(index / 70 % 70) + syllable(index % 70);
}

std::vector<std::string> class_names(const SyntheticSpec& spec) {
  const std::size_t n = spec.n_classes.value_or(spec.n_candidates);
  Rng rng(Rng::derive(spec.seed, {0x6e616d6573ULL, spec.ood ? 1u : 0u}));
  std::vector<std::string> out;
  for (auto k : rng.sample_without_replacement(4900, n)) out.push_back(pseudo_word(k));
  return out;
}

Tensor class_prototype(const SyntheticSpec& spec, std::size_t label) {
  const std::size_t s = spec.image_size;
  Rng rng(Rng::derive(spec.seed, {0x70726f746fULL, spec.ood ? 1u : 0u, label}));
  std::vector<float> px(s * s);
  for (auto& v : px) v = rng.below(2) == 1 ? 1.0f : 0.0f;
  return make_tensor<float>({1, s, s}, std::move(px));
}

}  // namespace synth

void SyntheticSpec::validate() const {
  if (n_candidates < 2) throw ConfigError("synthetic: n_candidates must be >= 2");
  if (image_size < 2 || image_size % 2 != 0) throw ConfigError("synthetic: image_size must be even and >= 2");
  if (n_eval == 0 && n_train == 0) throw ConfigError("synthetic: nothing to generate");
  switch (meta_task) {
    case MetaTask::classification: {
      const std::size_t classes = n_classes.value_or(n_candidates);
      if (classes != n_candidates) throw ConfigError("synthetic classification: pools hold every class, so n_classes must equal n_candidates");
      if (classes > 4900) throw ConfigError("synthetic classification: at most 4900 classes");
      break;
    }
    case MetaTask::vqa: break;
    case MetaTask::retrieval:
      if (n_eval > 0 && n_eval < n_candidates) throw ConfigError("synthetic retrieval: pools are drawn from the eval split, need n_eval >= n_candidates");
      if (n_eval > synth::kPatternCount) throw ConfigError("synthetic retrieval: n_eval exceeds the pattern space");
      break;
    case MetaTask::grounding:
      if (n_eval > 0 && (n_eval - 1) * 3 + 4 < n_candidates) throw ConfigError("synthetic grounding: too few eval images for the requested pool size");
      break;
  }
}

void SyntheticDataset::append(const SyntheticDataset& other) {
  tasks.merge(other.tasks);
  for (const auto& r : other.records) {
    if (std::any_of(records.begin(), records.end(), [&](const ExampleRecord& x) { return x.id == r.id; })) {
      throw DataError("synthetic append: duplicate record id '" + r.id + "'");
    }
    records.push_back(r);
  }
  for (const auto& [path, img] : other.images) {
    if (!images.emplace(path, img).second) throw DataError("synthetic append: duplicate image path '" + path + "'");
  }
}

namespace {

enum Stream : std::uint64_t { kRecordStream = 0x726563, kPatternStream = 0x706174, kWordStream = 0x776f7264 };

std::string record_id(const std::string& task, Split split, std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%05zu", i);
  return task + "-" + to_string(split) + "-" + buf;
}

std::string image_path(const std::string& stem) { return "images/" + stem + ".emt"; }

Rng record_rng(const SyntheticSpec& spec, std::uint64_t task_salt, Split split, std::size_t i) {
  return Rng(Rng::derive(spec.seed, {kRecordStream, task_salt, spec.ood ? 1u : 0u, split == Split::train ? 0u : 1u, i}));
}

Tensor add_noise(const Tensor& clean, Rng& rng, double sd) {
  auto src = clean.data<float>();
  std::vector<float> px(src.begin(), src.end());
  for (auto& v : px) v += static_cast<float>(sd * rng.normal());
  return make_tensor<float>(clean.shape(), std::move(px));
}

// Places four [1 x b x b] blocks as the quadrants of a [1 x 2b x 2b] image.
Tensor compose_quadrants(const std::array<Tensor, 4>& blocks) {
  const std::size_t b = blocks[0].dim(1), s = 2 * b;
  std::vector<float> px(s * s);
  for (std::size_t q = 0; q < 4; ++q) {
    auto src = blocks[q].data<float>();
    const std::size_t r0 = (q / 2) * b, c0 = (q % 2) * b;
    for (std::size_t r = 0; r < b; ++r)
      for (std::size_t c = 0; c < b; ++c) px[(r0 + r) * s + c0 + c] = src[r * b + c];
  }
  return make_tensor<float>({1, s, s}, std::move(px));
}

Tensor crop_quadrant(const Tensor& image, std::size_t q) {
  const std::size_t s = image.dim(1), b = s / 2;
  auto src = image.data<float>();
  std::vector<float> px(b * b);
  const std::size_t r0 = (q / 2) * b, c0 = (q % 2) * b;
  for (std::size_t r = 0; r < b; ++r)
    for (std::size_t c = 0; c < b; ++c) px[r * b + c] = src[(r0 + r) * s + c0 + c];
  return make_tensor<float>({1, b, b}, std::move(px));
}

Tensor solid_block(double level, std::size_t b) { return Tensor::full({1, b, b}, level, DType::f32); }

std::string suffix(const SyntheticSpec& spec) { return spec.ood ? "_ood" : ""; }

// Pool of `size` entries holding `positive` at a random slot; the other
// slots are filled from `distractors` in order.
void fill_pool(ExampleRecord& r, const Content& positive, std::vector<Content> distractors, std::size_t size, Rng& rng) {
  distractors.resize(size - 1);
  const std::size_t label = static_cast<std::size_t>(rng.below(size));
  distractors.insert(distractors.begin() + static_cast<std::ptrdiff_t>(label), positive);
  r.candidates = std::move(distractors);
  r.label_index = label;
  r.positive = positive;
}

// Text candidates: the answer vocabulary first, then filler words.
std::vector<Content> word_distractors(const std::vector<std::string>& vocab, const std::string& answer, std::size_t count,
                                      Rng& rng, const std::vector<std::string>& fillers) {
  std::vector<std::string> others;
  for (const auto& w : vocab) {
    if (w != answer) others.push_back(w);
  }
  rng.shuffle(others);
  for (const auto& f : fillers) {
    if (others.size() >= count) break;
    others.push_back(f);
  }
  others.resize(std::min(others.size(), count));
  rng.shuffle(others);
  std::vector<Content> out;
  for (auto& w : others) out.push_back(Content{w, std::nullopt});
  return out;
}

std::vector<std::string> filler_words(const SyntheticSpec& spec, std::size_t count) {
  Rng rng(Rng::derive(spec.seed, {kWordStream, spec.ood ? 1u : 0u}));
  std::vector<std::string> out;
  for (auto k : rng.sample_without_replacement(4900, std::min<std::size_t>(count, 4900))) out.push_back(synth::pseudo_word(k));
  return out;
}

SyntheticDataset classification(const SyntheticSpec& spec) {
  SyntheticDataset out;
  TaskSpec task{"synth_classification" + suffix(spec), MetaTask::classification,
                "Identify the object shown in the image.", Modality::image, Modality::text, spec.ood, std::nullopt};
  out.tasks.add(task);
  const auto names = synth::class_names(spec);
  std::vector<Tensor> protos;
  for (std::size_t j = 0; j < names.size(); ++j) protos.push_back(synth::class_prototype(spec, j));
  for (Split split : {Split::train, Split::eval}) {
    const std::size_t n = split == Split::train ? spec.n_train : spec.n_eval;
    for (std::size_t i = 0; i < n; ++i) {
      Rng rng = record_rng(spec, 1, split, i);
      const auto label = static_cast<std::size_t>(rng.below(names.size()));
      ExampleRecord r;
      r.id = record_id(task.task_id, split, i);
      r.task_id = task.task_id;
      r.split = split;
      const std::string img = image_path(r.id);
      out.images.emplace(img, add_noise(protos[label], rng, 3 * synth::kPixelNoise));
      r.query = Content{std::nullopt, img};
      const Content positive{names[label], std::nullopt};
      if (split == Split::train) {
        r.positive = positive;
      } else {
        std::vector<Content> others;
        for (std::size_t j = 0; j < names.size(); ++j) {
          if (j != label) others.push_back(Content{names[j], std::nullopt});
        }
        rng.shuffle(others);
        fill_pool(r, positive, std::move(others), names.size(), rng);
      }
      out.records.push_back(std::move(r));
    }
  }
  return out;
}

SyntheticDataset vqa(const SyntheticSpec& spec) {
  SyntheticDataset out;
  TaskSpec task{"synth_vqa" + suffix(spec), MetaTask::vqa, "Answer the question about the image.",
                Modality::image_text, Modality::text, spec.ood, std::nullopt};
  out.tasks.add(task);
  const auto colors = synth::palette(spec.ood);
  std::vector<std::string> vocab;
  for (const auto& c : colors) vocab.push_back(c.name);
  const auto fillers = filler_words(spec, spec.n_candidates);
  const std::size_t b = spec.image_size / 2;
  for (Split split : {Split::train, Split::eval}) {
    const std::size_t n = split == Split::train ? spec.n_train : spec.n_eval;
    for (std::size_t i = 0; i < n; ++i) {
      Rng rng = record_rng(spec, 2, split, i);
      std::array<std::size_t, 4> cells{};
      std::array<Tensor, 4> blocks;
      for (std::size_t q = 0; q < 4; ++q) {
        cells[q] = static_cast<std::size_t>(rng.below(colors.size()));
        blocks[q] = solid_block(colors[cells[q]].level, b);
      }
      const auto asked = static_cast<std::size_t>(rng.below(4));
      ExampleRecord r;
      r.id = record_id(task.task_id, split, i);
      r.task_id = task.task_id;
      r.split = split;
      const std::string img = image_path(r.id);
      out.images.emplace(img, add_noise(compose_quadrants(blocks), rng, synth::kPixelNoise));
      r.query = Content{"What color is the " + std::string(synth::kQuadrants[asked]) + " cell?", img};
      const std::string answer = colors[cells[asked]].name;
      const Content positive{answer, std::nullopt};
      if (split == Split::train) {
        r.positive = positive;
      } else {
        fill_pool(r, positive, word_distractors(vocab, answer, spec.n_candidates - 1, rng, fillers), spec.n_candidates, rng);
      }
      out.records.push_back(std::move(r));
    }
  }
  return out;
}

SyntheticDataset retrieval(const SyntheticSpec& spec) {
  SyntheticDataset out;
  const bool t2i = spec.direction == Direction::text_to_image;
  TaskSpec task{"synth_retrieval_" + to_string(spec.direction) + suffix(spec), MetaTask::retrieval,
                t2i ? "Find the image that matches the caption." : "Find the caption that describes the image.",
                t2i ? Modality::text : Modality::image, t2i ? Modality::image : Modality::text, spec.ood, std::nullopt};
  out.tasks.add(task);
  const auto names = synth::texture_names(spec.ood);
  const std::size_t b = spec.image_size / 2;

  // Eval patterns first, train patterns from the remainder, so no caption
  // is shared between the splits.
  Rng pattern_rng(Rng::derive(spec.seed, {kPatternStream, spec.ood ? 1u : 0u}));
  const auto order = pattern_rng.sample_without_replacement(synth::kPatternCount, synth::kPatternCount);
  auto pattern_for = [&](Split split, std::size_t i) {
    if (split == Split::eval) return order[i];
    const std::size_t pool = synth::kPatternCount - spec.n_eval;
    return order[spec.n_eval + i % pool];
  };

  for (Split split : {Split::train, Split::eval}) {
    const std::size_t n = split == Split::train ? spec.n_train : spec.n_eval;
    std::vector<Content> targets;
    std::vector<std::size_t> first_record;
    for (std::size_t i = 0; i < n; ++i) {
      Rng rng = record_rng(spec, 3, split, i);
      std::size_t pattern = pattern_for(split, i);
      std::array<Tensor, 4> blocks;
      std::string caption;
      for (std::size_t q = 0; q < 4; ++q) {
        const std::size_t tex = pattern % 8;
        pattern /= 8;
        blocks[q] = synth::texture_block(tex, b, spec.ood);
        caption += (q ? " " : "") + names[tex];
      }
      ExampleRecord r;
      r.id = record_id(task.task_id, split, i);
      r.task_id = task.task_id;
      r.split = split;
      const std::string img = image_path(r.id);
      out.images.emplace(img, add_noise(compose_quadrants(blocks), rng, synth::kPixelNoise));
      const Content text{caption, std::nullopt}, image{std::nullopt, img};
      r.query = t2i ? text : image;
      r.positive = t2i ? image : text;
      targets.push_back(*r.positive);
      out.records.push_back(std::move(r));
    }
    if (split == Split::eval) {
      const std::size_t base = out.records.size() - n;
      for (std::size_t i = 0; i < n; ++i) {
        Rng rng = record_rng(spec, 0x33706f6f6cULL, split, i);
        std::vector<Content> others;
        for (auto k : rng.sample_without_replacement(n - 1, spec.n_candidates - 1)) others.push_back(targets[k < i ? k : k + 1]);
        fill_pool(out.records[base + i], targets[i], std::move(others), spec.n_candidates, rng);
      }
    }
  }
  return out;
}

SyntheticDataset grounding(const SyntheticSpec& spec) {
  SyntheticDataset out;
  TaskSpec task{"synth_grounding" + suffix(spec), MetaTask::grounding, "Select the region named in the query.",
                Modality::image_text, Modality::image, spec.ood, std::string("Represent the cropped region.")};
  out.tasks.add(task);
  const std::size_t b = spec.image_size / 2;
  for (Split split : {Split::train, Split::eval}) {
    const std::size_t n = split == Split::train ? spec.n_train : spec.n_eval;
    std::vector<std::array<std::size_t, 4>> textures(n);
    std::vector<std::size_t> asked(n);
    const std::size_t base = out.records.size();
    for (std::size_t i = 0; i < n; ++i) {
      Rng rng = record_rng(spec, 4, split, i);
      const auto picks = rng.sample_without_replacement(8, 4);
      std::array<Tensor, 4> blocks;
      for (std::size_t q = 0; q < 4; ++q) {
        textures[i][q] = picks[q];
        blocks[q] = synth::texture_block(picks[q], b, spec.ood);
      }
      asked[i] = static_cast<std::size_t>(rng.below(4));
      ExampleRecord r;
      r.id = record_id(task.task_id, split, i);
      r.task_id = task.task_id;
      r.split = split;
      const std::string img = image_path(r.id);
      const Tensor image = add_noise(compose_quadrants(blocks), rng, synth::kPixelNoise);
      out.images.emplace(img, image);
      for (std::size_t q = 0; q < 4; ++q) {
        if (split == Split::train && q != asked[i]) continue;
        out.images.emplace(image_path(r.id + "-crop" + std::to_string(q)), crop_quadrant(image, q));
      }
      r.query = Content{std::string(synth::kQuadrants[asked[i]]), img};
      r.positive = Content{std::nullopt, image_path(r.id + "-crop" + std::to_string(asked[i]))};
      out.records.push_back(std::move(r));
    }
    if (split != Split::eval) continue;
    for (std::size_t i = 0; i < n; ++i) {
      ExampleRecord& r = out.records[base + i];
      Rng rng = record_rng(spec, 0x34706f6f6cULL, split, i);
      const std::size_t wanted = textures[i][asked[i]];
      std::vector<Content> same_image;
      for (std::size_t q = 0; q < 4; ++q) {
        if (q != asked[i]) same_image.push_back(Content{std::nullopt, image_path(r.id + "-crop" + std::to_string(q))});
      }
      rng.shuffle(same_image);
      const std::size_t hard = std::min(same_image.size(), spec.n_candidates - 1);
      same_image.resize(hard);
      std::vector<std::pair<std::size_t, std::size_t>> eligible;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        for (std::size_t q = 0; q < 4; ++q) {
          if (textures[j][q] != wanted) eligible.emplace_back(j, q);
        }
      }
      std::vector<Content> others = same_image;
      for (auto k : rng.sample_without_replacement(eligible.size(), spec.n_candidates - 1 - hard)) {
        const auto [j, q] = eligible[k];
        others.push_back(Content{std::nullopt, image_path(out.records[base + j].id + "-crop" + std::to_string(q))});
      }
      rng.shuffle(others);
      fill_pool(r, *r.positive, std::move(others), spec.n_candidates, rng);
    }
  }
  return out;
}

}  // namespace

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  switch (spec.meta_task) {
    case MetaTask::classification: return classification(spec);
    case MetaTask::vqa: return vqa(spec);
    case MetaTask::retrieval: return retrieval(spec);
    case MetaTask::grounding: return grounding(spec);
  }
  throw ConfigError("unsupported meta task");
}

SyntheticDataset generate_instruction_pair(const SyntheticSpec& spec) {
  if (spec.n_candidates < 2) throw ConfigError("synthetic: n_candidates must be >= 2");
  if (spec.image_size < 2 || spec.image_size % 2 != 0) throw ConfigError("synthetic: image_size must be even and >= 2");
  SyntheticDataset out;
  const std::string sfx = suffix(spec);
  const TaskSpec left{"pair_left" + sfx, MetaTask::vqa, "Name the color of the left half.", Modality::image,
                      Modality::text, spec.ood, std::nullopt};
  const TaskSpec right{"pair_right" + sfx, MetaTask::vqa, "Name the color of the right half.", Modality::image,
                       Modality::text, spec.ood, std::nullopt};
  out.tasks.add(left);
  out.tasks.add(right);
  const auto colors = synth::palette(spec.ood);
  std::vector<std::string> vocab;
  for (const auto& c : colors) vocab.push_back(c.name);
  const auto fillers = filler_words(spec, spec.n_candidates);
  const std::size_t b = spec.image_size / 2;
  for (Split split : {Split::train, Split::eval}) {
    const std::size_t n = split == Split::train ? spec.n_train : spec.n_eval;
    for (std::size_t i = 0; i < n; ++i) {
      Rng rng = record_rng(spec, 5, split, i);
      const auto pick = rng.sample_without_replacement(colors.size(), 2);
      const std::array<Tensor, 4> blocks{solid_block(colors[pick[0]].level, b), solid_block(colors[pick[1]].level, b),
                                         solid_block(colors[pick[0]].level, b), solid_block(colors[pick[1]].level, b)};
      const std::string img = image_path(record_id("pair" + sfx, split, i));
      out.images.emplace(img, add_noise(compose_quadrants(blocks), rng, synth::kPixelNoise));
      for (std::size_t side = 0; side < 2; ++side) {
        const TaskSpec& task = side == 0 ? left : right;
        ExampleRecord r;
        r.id = record_id(task.task_id, split, i);
        r.task_id = task.task_id;
        r.split = split;
        r.query = Content{std::nullopt, img};
        const std::string answer = colors[pick[side]].name;
        const Content positive{answer, std::nullopt};
        if (split == Split::train) {
          r.positive = positive;
        } else {
          fill_pool(r, positive, word_distractors(vocab, answer, spec.n_candidates - 1, rng, fillers), spec.n_candidates,
                    rng);
        }
        out.records.push_back(std::move(r));
      }
    }
  }
  return out;
}

void write_synthetic(const SyntheticDataset& data, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (ec) throw DataError("cannot create " + (out_dir / "images").string() + ": " + ec.message());
  for (const auto& [rel, img] : data.images) {
    try {
      save_tensor(out_dir / rel, img);
    } catch (const Error& e) {
      throw DataError(e.what());
    }
  }
  save_manifest(out_dir / kManifestFile, data.records);
  data.tasks.save(out_dir / kTaskFile);
}

}  // namespace emforge
