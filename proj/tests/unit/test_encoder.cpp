#include <gtest/gtest.h>

#include <cmath>

#include <nlohmann/json.hpp>

#include "emforge/encoder.hpp"
#include "emforge/ops.hpp"
#include "emforge/tokenizer.hpp"
#include "emforge/verify.hpp"
#include "oracles.hpp"

namespace emforge {
namespace {

using testing::random_tensor;

ModelConfig small_config() {
  ModelConfig c;
  c.hidden_dim = 16;
  c.layers = 2;
  c.heads = 2;
  c.max_seq = 48;
  return c;
}

TEST(Patchify, CountArithmetic) {
  Rng rng(1);
  EXPECT_EQ(patchify(random_tensor({1, 8, 8}, DType::f32, rng), 4).shape(), (Shape{4, 16}));
  EXPECT_EQ(patchify(random_tensor({3, 16, 16}, DType::f32, rng), 4).shape(), (Shape{16, 48}));
}

TEST(Patchify, SinglePatchIsFlattenedImage) {
  Rng rng(2);
  const Tensor image = random_tensor({1, 4, 4}, DType::f64, rng);
  EXPECT_EQ(patchify(image, 4).to_vector(), image.to_vector());
}

TEST(Patchify, RowMajorPatchOrder) {
  std::vector<double> v(16);
  for (std::size_t i = 0; i < 16; ++i) v[i] = static_cast<double>(i);
  const auto p = patchify(Tensor::from_values({1, 4, 4}, v, DType::f64), 2).to_vector();
  // Patch 1 is the top-right 2x2 block.
  EXPECT_EQ(std::vector<double>(p.begin() + 4, p.begin() + 8), (std::vector<double>{2, 3, 6, 7}));
}

TEST(Patchify, RejectsIndivisibleExtents) {
  EXPECT_THROW(patchify(Tensor::zeros({1, 6, 8}, DType::f32), 4), ShapeError);
  EXPECT_THROW(patchify(Tensor::zeros({8, 8}, DType::f32), 4), ShapeError);
}

TEST(BuildSequence, ImageMarkerExpandsToPatches) {
  const ModelConfig c = small_config();
  const TokenSequence seq = build_sequence("[IMG] hi", Tensor::zeros({1, 8, 8}, DType::f32), c);
  // BOS, IMG, 4 patches, ' ', 'h', 'i', EOS
  ASSERT_EQ(seq.size(), 10u);
  EXPECT_EQ(seq.tokens[1], kImgToken);
  for (std::size_t i = 2; i < 6; ++i) EXPECT_EQ(seq.tokens[i], TokenSequence::kPatchSlot);
  EXPECT_EQ(seq.patch_count(), 4u);
  EXPECT_EQ(seq.last_index(), 9u);
}

TEST(BuildSequence, MarkerAndImageMustAgree) {
  const ModelConfig c = small_config();
  EXPECT_THROW(build_sequence("no marker", Tensor::zeros({1, 8, 8}, DType::f32), c), ShapeError);
  EXPECT_THROW(build_sequence("[IMG] x", std::nullopt, c), ShapeError);
}

TEST(BuildSequence, LongTextIsTruncatedToBudget) {
  const ModelConfig c = small_config();
  const TokenSequence seq = build_sequence(std::string(200, 'a'), std::nullopt, c);
  EXPECT_EQ(seq.size(), c.max_seq);
  EXPECT_EQ(seq.tokens.back(), kEosToken);
}

TEST(Encode, OutputShapeAndNormalization) {
  const ModelConfig c = small_config();
  const Model m = init_model(c, 3, DType::f64);
  const EmbeddingVector raw = encode(build_sequence("hello", std::nullopt, c), m, false);
  const EmbeddingVector unit = encode(build_sequence("hello", std::nullopt, c), m, true);
  EXPECT_EQ(raw.values.shape(), (Shape{16}));
  EXPECT_FALSE(raw.normalized);
  EXPECT_TRUE(unit.normalized);
  double norm = 0;
  for (double v : unit.values.to_vector()) norm += v * v;
  EXPECT_NEAR(std::sqrt(norm), 1.0, 1e-12);
}

TEST(Encode, Deterministic) {
  const ModelConfig c = small_config();
  const Model m = init_model(c, 4, DType::f32);
  const TokenSequence seq = build_sequence("[IMG] a cat", Tensor::full({1, 8, 8}, 0.3, DType::f32), c);
  EXPECT_TRUE(encode(seq, m, true).values.bitwise_equal(encode(seq, m, true).values));
}

TEST(Encode, MaskedPaddingLeavesEmbeddingUnchanged) {
  const ModelConfig c = small_config();
  const Model m = init_model(c, 5, DType::f64);
  TokenSequence seq = build_sequence("pad me", std::nullopt, c);
  const Tensor before = encode(seq, m, false).values;
  seq.pad(5);
  EXPECT_TRUE(encode(seq, m, false).values.bitwise_equal(before));
}

TEST(Encode, MaskedFuturePositionsAreInvisible) {
  const ModelConfig c = small_config();
  const Model m = init_model(c, 6, DType::f64);
  TokenSequence a = build_sequence("abc", std::nullopt, c);
  TokenSequence b = a;
  a.pad(2);
  b.pad(2);
  b.tokens[a.size() - 1] = 'z';  // masked slot with a different id
  EXPECT_TRUE(encode(a, m, false).values.bitwise_equal(encode(b, m, false).values));
}

TEST(Encode, BatchRowsMatchSingleEncodes) {
  const ModelConfig c = small_config();
  const Model m = init_model(c, 7, DType::f32);
  const SequenceBatch batch = cli::random_batch(c, 6, 0, 8);
  const Tensor packed = encode_batch(batch.queries, m, true);
  for (std::size_t i = 0; i < batch.queries.size(); ++i) {
    EXPECT_TRUE(slice_rows(packed, i, 1).reshaped({16}).bitwise_equal(encode(batch.queries[i], m, true).values)) << i;
  }
}

TEST(Encode, Errors) {
  const ModelConfig c = small_config();
  const Model m = init_model(c, 9, DType::f32);
  TokenSequence seq = build_sequence("x", std::nullopt, c);
  seq.pad(c.max_seq);
  EXPECT_THROW(encode(seq, m, true), ShapeError);

  Model other = m;
  other.config.layers = 3;
  EXPECT_THROW(encode(build_sequence("x", std::nullopt, c), other, true), ConfigError);
}

TEST(ModelConfig, Validation) {
  ModelConfig c = small_config();
  EXPECT_NO_THROW(c.validate());
  c.heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.lora_rank = 16;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.max_seq = 1;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ModelConfig, JsonRoundTripIsStrict) {
  ModelConfig c = small_config();
  c.lora_rank = 4;
  c.lora_alpha = 8.0;
  EXPECT_EQ(model_config_from_json(to_json(c)), c);
  nlohmann::json j = to_json(c);
  j["hiden_dim"] = 3;
  EXPECT_THROW(model_config_from_json(j), ConfigError);
  j = to_json(c);
  j["layers"] = -1;
  EXPECT_THROW(model_config_from_json(j), ConfigError);
}

TEST(Model, InitializationContract) {
  ModelConfig c = small_config();
  c.lora_rank = 4;
  const Model m = init_model(c, 10, DType::f64);
  EXPECT_NO_THROW(validate_model(m));
  for (const auto& w : adapted_weights(c)) {
    for (double v : m.params.at(param::lora_b(w)).to_vector()) EXPECT_EQ(v, 0.0);
  }
  for (const auto& [name, t] : m.params) {
    if (name.ends_with(".bias")) {
      for (double v : t.to_vector()) EXPECT_EQ(v, 0.0) << name;
    }
  }
  ModelConfig full = small_config();
  const Model plain = init_model(full, 10, DType::f64);
  for (const auto& [name, _] : plain.params) EXPECT_FALSE(is_lora_parameter(name)) << name;
  EXPECT_TRUE(init_model(full, 10, DType::f64).params.at(param::kTokenEmbedding)
                  .bitwise_equal(plain.params.at(param::kTokenEmbedding)));
}

TEST(Model, TrainableSets) {
  ModelConfig c = small_config();
  EXPECT_EQ(trainable_parameters(c).size(), parameter_layout(c).size());
  c.lora_rank = 2;
  for (const auto& name : trainable_parameters(c)) {
    EXPECT_TRUE(is_lora_parameter(name) || name.ends_with(".gamma") || name.ends_with(".beta")) << name;
  }
}

TEST(EncoderGradients, PipelineMatchesFiniteDifferences) {
  const auto result = cli::check_finite_differences(cli::toy_config(), 1);
  EXPECT_TRUE(result.pass) << result.worst << " " << result.max_rel_error;
  EXPECT_GT(result.checked, 100u);
}

}  // namespace
}  // namespace emforge
