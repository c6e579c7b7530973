// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "emforge/dataset.hpp"
#include "emforge/instruction.hpp"
#include "emforge/tensor.hpp"

namespace emforge {

enum class Direction { text_to_image, image_to_text };
std::string to_string(Direction d);  // "t2i" / "i2t"
Direction direction_from_string(const std::string& name);

struct SyntheticSpec {
  MetaTask meta_task = MetaTask::retrieval;
  std::size_t n_train = 2000;
  std::size_t n_eval = 200;
  std::size_t n_candidates = 64;
  std::optional<std::size_t> n_classes;  // classification; defaults to n_candidates
  std::size_t image_size = 8;            // square, single channel, even
  std::uint64_t seed = 0;
  bool ood = false;
  Direction direction = Direction::text_to_image;  // retrieval only

  void validate() const;
};

// Generated records plus the images they reference, keyed by the relative
// path used in the records.
struct SyntheticDataset {
  std::vector<ExampleRecord> records;
  TaskRegistry tasks;
  std::map<std::string, Tensor> images;

  void append(const SyntheticDataset& other);
};

SyntheticDataset generate_synthetic(const SyntheticSpec& spec);

// Two tasks over the same query images (left half / right half colour),
// so the query content alone does not determine the target. n_train and
// n_eval count images; each image yields one record per task.
SyntheticDataset generate_instruction_pair(const SyntheticSpec& spec);

inline constexpr const char* kManifestFile = "manifest.jsonl";
inline constexpr const char* kTaskFile = "tasks.json";

// Writes manifest.jsonl, tasks.json and images/*.emt under out_dir.
void write_synthetic(const SyntheticDataset& data, const std::filesystem::path& out_dir);

// Generator vocabulary, exposed for oracles and tests.
namespace synth {

inline constexpr std::array<const char*, 4> kQuadrants = {"top left", "top right", "bottom left", "bottom right"};
inline constexpr double kPixelNoise = 0.05;

std::vector<std::string> texture_names(bool ood);
// Clean single-channel [1 x b x b] rendering of texture `index`.
Tensor texture_block(std::size_t index, std::size_t block, bool ood);

struct Color {
  std::string name;
  double level;
};
std::vector<Color> palette(bool ood);

std::vector<std::string> class_names(const SyntheticSpec& spec);
Tensor class_prototype(const SyntheticSpec& spec, std::size_t label);

// Two-syllable filler word; distinct for distinct indices below 4900.
std::string pseudo_word(std::size_t index);

}  // namespace synth
}  // namespace emforge
