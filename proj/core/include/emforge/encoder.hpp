// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "emforge/model.hpp"
#include "emforge/tensor.hpp"

namespace emforge {

// Splits a [c x h x w] image into non-overlapping p x p patches in row-major
// patch order. Each patch vector is laid out channel, row, column.
// Returns [(h/p)*(w/p) x c*p*p].
Tensor patchify(const Tensor& image, std::size_t patch_size);

// Mixed image/text model input. Text positions hold vocab ids; image patch
// positions hold kPatchSlot and index `patches` in order of appearance.
struct TokenSequence {
  static constexpr std::int32_t kPatchSlot = -1;

  std::vector<std::int32_t> tokens;
  std::vector<std::uint8_t> mask;  // 1 = real token
  Tensor patches;                  // [slots x patch_dim], undefined when text-only

  std::size_t size() const { return tokens.size(); }
  std::size_t patch_count() const;
  // Position pooled for the embedding: the last real token.
  std::size_t last_index() const;
  // Appends masked PAD tokens.
  void pad(std::size_t count);
};

// Tokenizes rendered text and expands the IMG marker into the IMG token
// followed by the image's patches. The text budget shrinks by the patch
// count so the result fits max_seq.
TokenSequence build_sequence(std::string_view rendered, const std::optional<Tensor>& image, const ModelConfig& config);

struct EmbeddingVector {
  Tensor values;  // [d]
  bool normalized = false;
};

// Embeds a batch of sequences packed into one pass; row i of the result is
// the final-layer state at sequences[i].last_index(), optionally
// L2-normalized. Tracked when any parameter is tracked.
Tensor encode_batch(std::span<const TokenSequence> sequences, const Model& model, bool normalize);

EmbeddingVector encode(const TokenSequence& sequence, const Model& model, bool normalize);

}  // namespace emforge
