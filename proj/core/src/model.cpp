// SPDX-License-Identifier: Apache-2.0
#include "emforge/model.hpp"

#include <cmath>
#include <nlohmann/json.hpp>

#include "emforge/ops.hpp"
#include "emforge/rng.hpp"
#include "emforge/tokenizer.hpp"

namespace emforge {

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (hidden_dim == 0) fail("hidden_dim must be positive");
  if (layers == 0) fail("layers must be >= 1");
  if (heads == 0) fail("heads must be >= 1");
  if (hidden_dim % heads != 0) fail("hidden_dim must be a multiple of heads");
  if (vocab_size != kVocabSize) fail("vocab_size must be 260 (256 bytes + 4 specials)");
  if (max_seq < 2) fail("max_seq must be >= 2");
  if (patch_size == 0) fail("patch_size must be positive");
  if (image_channels == 0) fail("image_channels must be positive");
  if (lora_rank >= hidden_dim) fail("lora_rank must be below hidden_dim");
  if (!(lora_alpha > 0)) fail("lora_alpha must be positive");
}

nlohmann::json to_json(const ModelConfig& c) {
  return nlohmann::json{{"hidden_dim", c.hidden_dim}, {"layers", c.layers},           {"heads", c.heads},
                        {"vocab_size", c.vocab_size}, {"max_seq", c.max_seq},         {"patch_size", c.patch_size},
                        {"image_channels", c.image_channels}, {"lora_rank", c.lora_rank}, {"lora_alpha", c.lora_alpha}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  ModelConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key != "lora_alpha" && !(value.is_number_integer() && value.get<std::int64_t>() >= 0)) {
      throw ConfigError("model config: '" + key + "' must be a non-negative integer");
    }
    try {
      if (key == "hidden_dim") c.hidden_dim = value.get<std::size_t>();
      else if (key == "layers") c.layers = value.get<std::size_t>();
      else if (key == "heads") c.heads = value.get<std::size_t>();
      else if (key == "vocab_size") c.vocab_size = value.get<std::size_t>();
      else if (key == "max_seq") c.max_seq = value.get<std::size_t>();
      else if (key == "patch_size") c.patch_size = value.get<std::size_t>();
      else if (key == "image_channels") c.image_channels = value.get<std::size_t>();
      else if (key == "lora_rank") c.lora_rank = value.get<std::size_t>();
      else if (key == "lora_alpha") c.lora_alpha = value.get<double>();
      else throw ConfigError("model config: unknown key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("model config: bad value for '" + key + "': " + e.what());
    }
  }
  c.validate();
  return c;
}

DType Model::dtype() const {
  if (params.empty()) throw ConfigError("model has no parameters");
  return params.begin()->second.dtype();
}

namespace param {
std::string layer(std::size_t index, const std::string& leaf) { return "layers." + std::to_string(index) + "." + leaf; }
std::string lora_a(const std::string& weight) { return weight + ".lora_a"; }
std::string lora_b(const std::string& weight) { return weight + ".lora_b"; }
}  // namespace param

std::vector<std::string> adapted_weights(const ModelConfig& config) {
  std::vector<std::string> names{param::kPatchWeight};
  for (std::size_t l = 0; l < config.layers; ++l) {
    names.push_back(param::layer(l, "attn.qkv.weight"));
    names.push_back(param::layer(l, "attn.out.weight"));
    names.push_back(param::layer(l, "mlp.up.weight"));
    names.push_back(param::layer(l, "mlp.down.weight"));
  }
  return names;
}

std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelConfig& c) {
  const std::size_t d = c.hidden_dim, m = c.mlp_dim();
  std::vector<std::pair<std::string, Shape>> out{
      {param::kTokenEmbedding, {c.vocab_size, d}},
      {param::kPositionEmbedding, {c.max_seq, d}},
      {param::kPatchWeight, {d, c.patch_dim()}},
      {param::kPatchBias, {d}},
  };
  for (std::size_t l = 0; l < c.layers; ++l) {
    auto L = [l](const char* leaf) { return param::layer(l, leaf); };
    out.push_back({L("ln1.gamma"), {d}});
    out.push_back({L("ln1.beta"), {d}});
    out.push_back({L("attn.qkv.weight"), {3 * d, d}});
    out.push_back({L("attn.qkv.bias"), {3 * d}});
    out.push_back({L("attn.out.weight"), {d, d}});
    out.push_back({L("attn.out.bias"), {d}});
    out.push_back({L("ln2.gamma"), {d}});
    out.push_back({L("ln2.beta"), {d}});
    out.push_back({L("mlp.up.weight"), {m, d}});
    out.push_back({L("mlp.up.bias"), {m}});
    out.push_back({L("mlp.down.weight"), {d, m}});
    out.push_back({L("mlp.down.bias"), {d}});
  }
  out.push_back({param::kFinalGamma, {d}});
  out.push_back({param::kFinalBeta, {d}});
  if (c.lora_rank > 0) {
    const std::size_t base_count = out.size();
    for (const auto& w : adapted_weights(c)) {
      Shape ws;
      for (std::size_t i = 0; i < base_count; ++i) {
        if (out[i].first == w) ws = out[i].second;
      }
      out.push_back({param::lora_a(w), {c.lora_rank, ws[1]}});
      out.push_back({param::lora_b(w), {ws[0], c.lora_rank}});
    }
  }
  return out;
}

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

bool is_lora_parameter(const std::string& name) { return ends_with(name, ".lora_a") || ends_with(name, ".lora_b"); }

Model init_model(const ModelConfig& config, std::uint64_t seed, DType dtype) {
  config.validate();
  Model model{config, {}};
  std::uint64_t index = 0;
  for (const auto& [name, shape] : parameter_layout(config)) {
    Rng rng(Rng::derive(seed, {0x1A17, index++}));
    const std::size_t n = shape_numel(shape);
    std::vector<double> values(n, 0.0);
    if (ends_with(name, ".gamma")) {
      std::fill(values.begin(), values.end(), 1.0);
    } else if (ends_with(name, ".bias") || ends_with(name, ".beta") || ends_with(name, ".lora_b")) {
      // zeros
    } else if (ends_with(name, ".lora_a")) {
      const double sd = 1.0 / std::sqrt(static_cast<double>(config.lora_rank));
      for (auto& v : values) v = sd * rng.normal();
    } else {
      for (auto& v : values) v = 0.02 * rng.normal();
    }
    model.params.set(name, Tensor::from_values(shape, values, dtype));
  }
  return model;
}

void validate_model(const Model& model) {
  model.config.validate();
  const auto layout = parameter_layout(model.config);
  if (layout.size() != model.params.size()) {
    throw ConfigError("parameter count " + std::to_string(model.params.size()) + " does not match config (expected " +
                      std::to_string(layout.size()) + ")");
  }
  const DType dtype = model.dtype();
  for (const auto& [name, shape] : layout) {
    if (!model.params.contains(name)) throw ConfigError("missing parameter '" + name + "'");
    const Tensor& t = model.params.at(name);
    if (t.shape() != shape) {
      throw ConfigError("parameter '" + name + "' has shape " + shape_to_string(t.shape()) + ", config expects " +
                        shape_to_string(shape));
    }
    if (t.dtype() != dtype) throw ConfigError("parameter '" + name + "' has mixed dtype");
  }
}

std::vector<std::string> trainable_parameters(const ModelConfig& config) {
  std::vector<std::string> names;
  for (const auto& [name, _] : parameter_layout(config)) {
    if (config.lora_rank == 0 || is_lora_parameter(name) || ends_with(name, ".gamma") || ends_with(name, ".beta")) {
      names.push_back(name);
    }
  }
  return names;
}

Tensor lora_forward(const Tensor& x, const Tensor& weight, const Tensor& a, const Tensor& b, double alpha,
                    std::size_t rank) {
  if (rank == 0) throw ConfigError("lora_forward: rank 0 has no adapter; use the base projection");
  if (a.rank() != 2 || b.rank() != 2 || weight.rank() != 2 || a.dim(0) != rank || b.dim(1) != rank ||
      a.dim(1) != weight.dim(1) || b.dim(0) != weight.dim(0)) {
    throw ShapeError("lora_forward: adapter shapes A" + shape_to_string(a.shape()) + " B" + shape_to_string(b.shape()) +
                     " do not conform to W" + shape_to_string(weight.shape()) + " at rank " + std::to_string(rank));
  }
  const Tensor base = matmul(x, transpose(weight));
  const Tensor low = matmul(matmul(x, transpose(a)), transpose(b));
  return add(base, scale(low, alpha / static_cast<double>(rank)));
}

Model merge_lora(const Model& model) {
  if (model.config.lora_rank == 0) throw ConfigError("merge_lora: model has no LoRA adapters (full fine-tuning parameters)");
  validate_model(model);
  Model merged{model.config, {}};
  merged.config.lora_rank = 0;
  const double factor = model.config.lora_scale();
  for (const auto& [name, t] : model.params) {
    if (is_lora_parameter(name)) continue;
    merged.params.set(name, t.detach());
  }
  for (const auto& w : adapted_weights(model.config)) {
    const Tensor delta = scale(matmul(model.params.at(param::lora_b(w)), model.params.at(param::lora_a(w))), factor);
    merged.params.set(w, add(model.params.at(w).detach(), delta.detach()));
  }
  return merged;
}

}  // namespace emforge
