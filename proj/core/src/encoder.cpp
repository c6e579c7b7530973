// SPDX-License-Identifier: Apache-2.0
#include "emforge/encoder.hpp"

#include <cmath>

#include "emforge/ops.hpp"
#include "emforge/tokenizer.hpp"

namespace emforge {
namespace {

constexpr double kLayerNormEps = 1e-5;

Tensor project(const Model& model, const Tensor& x, const std::string& weight, const std::string& bias) {
  const ModelConfig& c = model.config;
  const Tensor& w = model.params.at(weight);
  Tensor y = c.lora_rank > 0 ? lora_forward(x, w, model.params.at(param::lora_a(weight)),
                                            model.params.at(param::lora_b(weight)), c.lora_alpha, c.lora_rank)
                             : matmul(x, transpose(w));
  return add_bias(y, model.params.at(bias));
}

void check_params(const Model& model) {
  const auto layout = parameter_layout(model.config);
  if (layout.size() != model.params.size()) throw ConfigError("encode: parameter set does not match model config");
  for (const auto& [name, shape] : layout) {
    if (!model.params.contains(name) || model.params.at(name).shape() != shape) {
      throw ConfigError("encode: parameter '" + name + "' missing or mis-shaped for this config");
    }
  }
}

}  // namespace

Tensor patchify(const Tensor& image, std::size_t p) {
  if (image.rank() != 3) throw ShapeError("patchify: image must be [c x h x w], got " + shape_to_string(image.shape()));
  if (p == 0) throw ShapeError("patchify: patch size must be positive");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (h % p != 0 || w % p != 0) {
    throw ShapeError("patchify: image extents " + std::to_string(h) + "x" + std::to_string(w) +
                     " not divisible by patch size " + std::to_string(p));
  }
  const std::size_t ph = h / p, pw = w / p, len = c * p * p;
  return dispatch(image.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto src = image.data<T>();
    std::vector<T> out(ph * pw * len);
    for (std::size_t by = 0; by < ph; ++by)
      for (std::size_t bx = 0; bx < pw; ++bx) {
        T* dst = out.data() + (by * pw + bx) * len;
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t y = 0; y < p; ++y)
            for (std::size_t x = 0; x < p; ++x) *dst++ = src[(ch * h + by * p + y) * w + bx * p + x];
      }
    return make_tensor<T>({ph * pw, len}, std::move(out));
  });
}

std::size_t TokenSequence::patch_count() const { return patches.defined() ? patches.dim(0) : 0; }

std::size_t TokenSequence::last_index() const {
  for (std::size_t i = tokens.size(); i > 0; --i) {
    if (mask[i - 1]) return i - 1;
  }
  throw ShapeError("token sequence has no real token");
}

void TokenSequence::pad(std::size_t count) {
  tokens.insert(tokens.end(), count, kPadToken);
  mask.insert(mask.end(), count, 0);
}

TokenSequence build_sequence(std::string_view rendered, const std::optional<Tensor>& image, const ModelConfig& config) {
  TokenSequence seq;
  std::size_t patch_count = 0;
  if (image) {
    seq.patches = patchify(*image, config.patch_size);
    if (seq.patches.dim(1) != config.patch_dim()) {
      throw ShapeError("build_sequence: image has " + std::to_string(image->dim(0)) + " channels, model expects " +
                       std::to_string(config.image_channels));
    }
    patch_count = seq.patches.dim(0);
  }
  if (config.max_seq < patch_count + 3) throw ShapeError("build_sequence: image does not fit the sequence budget");
  const auto ids = tokenize_text(rendered, config.max_seq - patch_count);
  std::size_t markers = 0;
  for (auto id : ids) {
    if (id == kImgToken) ++markers;
  }
  if (markers != (image ? 1u : 0u)) {
    throw ShapeError("build_sequence: expected " + std::string(image ? "exactly one" : "no") +
                     " image marker in rendered input, found " + std::to_string(markers));
  }
  for (auto id : ids) {
    seq.tokens.push_back(id);
    if (id == kImgToken) seq.tokens.insert(seq.tokens.end(), patch_count, TokenSequence::kPatchSlot);
  }
  seq.mask.assign(seq.tokens.size(), 1);
  return seq;
}

Tensor encode_batch(std::span<const TokenSequence> sequences, const Model& model, bool normalize) {
  const ModelConfig& c = model.config;
  if (sequences.empty()) throw ShapeError("encode_batch: no sequences");
  check_params(model);
  const DType dtype = model.dtype();
  const std::size_t d = c.hidden_dim;

  std::vector<std::size_t> text_ids, positions, order, pooled;
  std::vector<Tensor> patch_blocks;
  std::vector<std::size_t> patch_slot_rows;  // packed row of every patch, in block order
  AttentionLayout layout;
  std::size_t rows = 0;
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    const TokenSequence& seq = sequences[s];
    if (seq.tokens.empty()) throw ShapeError("encode_batch: empty sequence at index " + std::to_string(s));
    if (seq.size() > c.max_seq) {
      throw ShapeError("encode_batch: sequence " + std::to_string(s) + " has length " + std::to_string(seq.size()) +
                       " > max_seq " + std::to_string(c.max_seq));
    }
    if (seq.mask.size() != seq.size()) throw ShapeError("encode_batch: mask length differs from token count");
    std::size_t slot = 0;
    for (std::size_t i = 0; i < seq.size(); ++i) {
      const auto tok = seq.tokens[i];
      if (tok == TokenSequence::kPatchSlot) {
        ++slot;
        patch_slot_rows.push_back(rows + i);
      } else if (tok < 0 || static_cast<std::size_t>(tok) >= c.vocab_size) {
        throw ShapeError("encode_batch: token id out of range in sequence " + std::to_string(s));
      } else {
        text_ids.push_back(static_cast<std::size_t>(tok));
      }
      positions.push_back(i);
      layout.key_mask.push_back(seq.mask[i]);
    }
    if (slot != seq.patch_count()) throw ShapeError("encode_batch: patch slot count differs from patch rows");
    if (slot > 0) {
      if (seq.patches.dim(1) != c.patch_dim()) throw ShapeError("encode_batch: patch width differs from model config");
      patch_blocks.push_back(seq.patches.dtype() == dtype ? seq.patches : seq.patches.astype(dtype));
    }
    layout.segments.emplace_back(rows, seq.size());
    pooled.push_back(rows + seq.last_index());
    rows += seq.size();
  }

  // combined = [text embeddings; patch embeddings]; order maps each packed
  // row to its source row in combined.
  std::vector<Tensor> parts;
  std::vector<std::size_t> source(rows);
  {
    std::vector<std::uint8_t> is_patch(rows, 0);
    for (auto r : patch_slot_rows) is_patch[r] = 1;
    std::size_t t = 0, p = text_ids.size();
    for (std::size_t r = 0; r < rows; ++r) source[r] = is_patch[r] ? p++ : t++;
  }
  if (!text_ids.empty()) parts.push_back(gather_rows(model.params.at(param::kTokenEmbedding), text_ids));
  if (!patch_blocks.empty()) {
    const Tensor raw = patch_blocks.size() == 1 ? patch_blocks[0] : concat_rows(patch_blocks);
    parts.push_back(project(model, raw, param::kPatchWeight, param::kPatchBias));
  }
  const Tensor combined = parts.size() == 1 ? parts[0] : concat_rows(parts);
  Tensor h = add(gather_rows(combined, source), gather_rows(model.params.at(param::kPositionEmbedding), positions));

  for (std::size_t l = 0; l < c.layers; ++l) {
    auto P = [&](const char* leaf) -> const Tensor& { return model.params.at(param::layer(l, leaf)); };
    const Tensor a_in = layer_norm(h, P("ln1.gamma"), P("ln1.beta"), kLayerNormEps);
    const Tensor qkv = project(model, a_in, param::layer(l, "attn.qkv.weight"), param::layer(l, "attn.qkv.bias"));
    const Tensor attn = causal_attention(qkv, layout, c.heads);
    h = add(h, project(model, attn, param::layer(l, "attn.out.weight"), param::layer(l, "attn.out.bias")));
    const Tensor m_in = layer_norm(h, P("ln2.gamma"), P("ln2.beta"), kLayerNormEps);
    const Tensor up = gelu(project(model, m_in, param::layer(l, "mlp.up.weight"), param::layer(l, "mlp.up.bias")));
    h = add(h, project(model, up, param::layer(l, "mlp.down.weight"), param::layer(l, "mlp.down.bias")));
  }
  const Tensor last = gather_rows(h, pooled);
  Tensor out = layer_norm(last, model.params.at(param::kFinalGamma), model.params.at(param::kFinalBeta), kLayerNormEps);
  if (out.dim(1) != d) throw ShapeError("encode_batch: internal width mismatch");
  return normalize ? l2_normalize_rows(out) : out;
}

EmbeddingVector encode(const TokenSequence& sequence, const Model& model, bool normalize) {
  const Tensor rows = encode_batch(std::span<const TokenSequence>(&sequence, 1), model, normalize);
  return {reshape(rows, {model.config.hidden_dim}), normalize};
}

}  // namespace emforge
