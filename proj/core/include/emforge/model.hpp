// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "emforge/named_tensors.hpp"
#include "emforge/tensor.hpp"

namespace emforge {

struct ModelConfig {
  std::size_t hidden_dim = 64;
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t vocab_size = 260;
  std::size_t max_seq = 128;
  std::size_t patch_size = 4;
  std::size_t image_channels = 1;
  std::size_t lora_rank = 0;  // 0 = full fine-tuning
  double lora_alpha = 16.0;

  std::size_t mlp_dim() const { return 4 * hidden_dim; }
  std::size_t patch_dim() const { return image_channels * patch_size * patch_size; }
  std::size_t head_dim() const { return hidden_dim / heads; }
  double lora_scale() const { return lora_alpha / static_cast<double>(lora_rank); }

  // Throws ConfigError when an invariant is violated.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

nlohmann::json to_json(const ModelConfig& config);
// Strict: unknown keys are errors, missing keys keep their defaults.
ModelConfig model_config_from_json(const nlohmann::json& j);

// Encoder parameters with the configuration they were built for.
struct Model {
  ModelConfig config;
  NamedTensors params;

  DType dtype() const;
};

// Parameter naming.
namespace param {
inline const std::string kTokenEmbedding = "tok_emb";
inline const std::string kPositionEmbedding = "pos_emb";
inline const std::string kPatchWeight = "patch_proj.weight";
inline const std::string kPatchBias = "patch_proj.bias";
inline const std::string kFinalGamma = "final_norm.gamma";
inline const std::string kFinalBeta = "final_norm.beta";
std::string layer(std::size_t index, const std::string& leaf);
std::string lora_a(const std::string& weight);
std::string lora_b(const std::string& weight);
}  // namespace param

// Weight matrices that receive a LoRA pair when lora_rank >= 1.
std::vector<std::string> adapted_weights(const ModelConfig& config);

// Names and shapes of every parameter, in canonical order.
std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelConfig& config);

// normal(0, 0.02) projections and embeddings, unit gammas, zero biases,
// zero LoRA B, normal(0, 1/sqrt(r)) LoRA A.
Model init_model(const ModelConfig& config, std::uint64_t seed, DType dtype);

// Throws ConfigError when params do not match the config's layout.
void validate_model(const Model& model);

// Parameters updated by training: everything in full fine-tuning; LoRA
// factors and layer-norm affine parameters otherwise.
std::vector<std::string> trainable_parameters(const ModelConfig& config);
bool is_lora_parameter(const std::string& name);

// x * (W + (alpha / r) * B * A)^T, evaluated as the base product plus the
// low-rank correction. W: [out x in], A: [r x in], B: [out x r].
Tensor lora_forward(const Tensor& x, const Tensor& weight, const Tensor& a, const Tensor& b, double alpha,
                    std::size_t rank);

// Folds every adapter into its base weight and drops the LoRA tensors.
Model merge_lora(const Model& model);

}  // namespace emforge
