#include <gtest/gtest.h>

#include <cmath>

#include "emforge/ops.hpp"
#include "op_catalog.hpp"
#include "oracles.hpp"

namespace emforge {
namespace {

using testing::random_tensor;

Tensor f64(Shape s, std::initializer_list<double> v) { return Tensor::from_values(std::move(s), v, DType::f64); }

TEST(Matmul, Identity) {
  const Tensor a = f64({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(matmul(a, f64({2, 2}, {1, 0, 0, 1})).to_vector(), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Matmul, ColumnVector) {
  EXPECT_EQ(matmul(f64({2, 2}, {1, 2, 3, 4}), f64({2, 1}, {5, 6})).to_vector(), (std::vector<double>{17, 39}));
}

TEST(Matmul, ZeroLeftOperand) {
  Rng rng(1);
  const Tensor out = matmul(Tensor::zeros({2, 2}, DType::f64), random_tensor({2, 3}, DType::f64, rng));
  for (double v : out.to_vector()) EXPECT_EQ(v, 0.0);
}

TEST(Matmul, Errors) {
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}, DType::f64), Tensor::zeros({2, 3}, DType::f64)), ShapeError);
  EXPECT_THROW(matmul(Tensor::zeros({2, 2}, DType::f64), Tensor::zeros({2, 2}, DType::f32)), DTypeError);
  EXPECT_THROW(matmul(Tensor::zeros({4}, DType::f64), Tensor::zeros({4, 1}, DType::f64)), ShapeError);
}

// Shapes straddle the kernel's row, column and depth tiles.
template <class T>
void expect_matches_naive(std::uint64_t seed) {
  Rng rng(seed);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t m = 1 + rng.below(37), k = 1 + rng.below(600), n = 1 + rng.below(70);
    const Tensor a = random_tensor({m, k}, dtype_of<T>(), rng);
    const Tensor b = random_tensor({k, n}, dtype_of<T>(), rng);
    const auto av = a.data<T>(), bv = b.data<T>();
    const auto ref = testing::naive_matmul(std::vector<T>(av.begin(), av.end()), std::vector<T>(bv.begin(), bv.end()),
                                           m, k, n);
    EXPECT_TRUE(matmul(a, b).bitwise_equal(make_tensor<T>({m, n}, ref))) << m << "x" << k << "x" << n;
  }
}

TEST(Matmul, BitwiseEqualToNaiveLoopF64) { expect_matches_naive<double>(2); }
TEST(Matmul, BitwiseEqualToNaiveLoopF32) { expect_matches_naive<float>(3); }

TEST(Softmax, Examples) {
  EXPECT_EQ(softmax(f64({2}, {0, 0})).to_vector(), (std::vector<double>{0.5, 0.5}));
  const auto v = softmax(f64({2}, {0, std::log(3.0)})).to_vector();
  EXPECT_NEAR(v[0], 0.25, 1e-15);
  EXPECT_NEAR(v[1], 0.75, 1e-15);
}

TEST(Softmax, ShiftInvariance) {
  Rng rng(5);
  const Tensor x = random_tensor({3, 7}, DType::f64, rng);
  const Tensor shifted = add(x, Tensor::full({3, 7}, 12.5, DType::f64));
  const auto a = softmax(x).to_vector(), b = softmax(shifted).to_vector();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-14);
}

TEST(Softmax, SumsToOneForLargeInputs) {
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t rows = 1 + rng.below(4), n = 1 + rng.below(50);
    for (DType dtype : {DType::f32, DType::f64}) {
      const Tensor x = random_tensor({rows, n}, dtype, rng, -80.0, 80.0);
      const Tensor y = softmax(x, 1);
      const double tol = dtype == DType::f32 ? 1e-6 : 1e-12;
      for (std::size_t r = 0; r < rows; ++r) {
        double total = 0;
        for (std::size_t j = 0; j < n; ++j) {
          EXPECT_GT(y.at(r * n + j), 0.0 - 1e-300);
          total += y.at(r * n + j);
        }
        EXPECT_NEAR(total, 1.0, tol);
      }
    }
  }
}

TEST(Softmax, AxisZeroMatchesTransposedAxisOne) {
  Rng rng(8);
  const Tensor x = random_tensor({4, 3}, DType::f64, rng);
  EXPECT_TRUE(softmax(x, 0).bitwise_equal(transpose(softmax(transpose(x), 1))));
  EXPECT_THROW(softmax(x, 2), ShapeError);
}

TEST(LayerNorm, Examples) {
  const Tensor ones = f64({2}, {1, 1});
  const Tensor zeros = f64({2}, {0, 0});
  for (double v : layer_norm(f64({1, 2}, {3, 3}), ones, zeros, 1e-5).to_vector()) EXPECT_EQ(v, 0.0);
  const auto unit = layer_norm(f64({1, 2}, {1, -1}), ones, zeros, 1e-12).to_vector();
  EXPECT_NEAR(unit[0], 1.0, 1e-11);
  EXPECT_NEAR(unit[1], -1.0, 1e-11);
  const auto affine = layer_norm(f64({1, 2}, {1, -1}), f64({2}, {2, 2}), ones, 1e-12).to_vector();
  EXPECT_NEAR(affine[0], 3.0, 1e-11);
  EXPECT_NEAR(affine[1], -1.0, 1e-11);
}

TEST(LayerNorm, ParameterShapeMismatch) {
  EXPECT_THROW(layer_norm(Tensor::zeros({2, 3}, DType::f64), Tensor::zeros({2}, DType::f64),
                          Tensor::zeros({3}, DType::f64), 1e-5),
               ShapeError);
}

TEST(Ops, L2NormalizeRejectsZeroRows) {
  EXPECT_THROW(l2_normalize_rows(Tensor::zeros({2, 3}, DType::f64)), NumericError);
  const auto v = l2_normalize_rows(f64({1, 2}, {3, 4})).to_vector();
  EXPECT_DOUBLE_EQ(v[0], 0.6);
  EXPECT_DOUBLE_EQ(v[1], 0.8);
}

TEST(Ops, GroupDotLayout) {
  const Tensor a = f64({2, 2}, {1, 0, 0, 1});
  const Tensor b = f64({4, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  EXPECT_EQ(group_dot(a, b, 2).to_vector(), (std::vector<double>{1, 3, 6, 8}));
  EXPECT_THROW(group_dot(a, b, 3), ShapeError);
}

TEST(Ops, ConcatAndSliceColumnsInvert) {
  Rng rng(9);
  const Tensor l = random_tensor({3, 2}, DType::f64, rng), r = random_tensor({3, 4}, DType::f64, rng);
  const Tensor both = concat_cols(l, r);
  EXPECT_TRUE(slice_cols(both, 0, 2).bitwise_equal(l));
  EXPECT_TRUE(slice_cols(both, 2, 4).bitwise_equal(r));
  EXPECT_THROW(slice_cols(both, 5, 2), ShapeError);
}

TEST(Attention, FirstRowAttendsOnlyToItself) {
  Rng rng(10);
  const std::size_t d = 4;
  const Tensor qkv = random_tensor({3, 3 * d}, DType::f64, rng);
  AttentionLayout layout{{{0, 3}}, {1, 1, 1}};
  const auto out = causal_attention(qkv, layout, 2).to_vector();
  for (std::size_t c = 0; c < d; ++c) EXPECT_NEAR(out[c], qkv.at(2 * d + c), 1e-15);
}

TEST(Attention, SegmentsAreIndependent) {
  Rng rng(12);
  const std::size_t d = 4;
  const Tensor a = random_tensor({3, 3 * d}, DType::f64, rng), b = random_tensor({2, 3 * d}, DType::f64, rng);
  const Tensor packed = causal_attention(concat_rows(std::vector<Tensor>{a, b}), {{{0, 3}, {3, 2}}, {1, 1, 1, 1, 1}}, 2);
  EXPECT_TRUE(slice_rows(packed, 0, 3).bitwise_equal(causal_attention(a, {{{0, 3}}, {1, 1, 1}}, 2)));
  EXPECT_TRUE(slice_rows(packed, 3, 2).bitwise_equal(causal_attention(b, {{{0, 2}}, {1, 1}}, 2)));
}

TEST(Attention, MaskedKeysAreIgnored) {
  Rng rng(13);
  const std::size_t d = 4;
  const Tensor x = random_tensor({3, 3 * d}, DType::f64, rng);
  std::vector<double> v = x.to_vector();
  for (std::size_t c = 0; c < 3 * d; ++c) v[1 * 3 * d + c] = 100.0 + c;  // row 1 is masked out
  const Tensor y = Tensor::from_values({3, 3 * d}, v, DType::f64);
  const AttentionLayout layout{{{0, 3}}, {1, 0, 1}};
  const Tensor ox = causal_attention(x, layout, 1), oy = causal_attention(y, layout, 1);
  EXPECT_TRUE(slice_rows(ox, 2, 1).bitwise_equal(slice_rows(oy, 2, 1)));
}

// Every op, many random shapes: tape gradients against central differences.
TEST(OpGradients, MatchFiniteDifferences) {
  std::size_t cases = 0;
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    for (const auto& c : testing::differentiable_ops(seed)) {
      const auto check = testing::check_op_gradient(c.op, c.inputs, seed);
      EXPECT_LE(check.max_rel_error, 1e-4) << c.name << " seed " << seed;
      ++cases;
    }
  }
  EXPECT_GE(cases, 100u);
}

TEST(OpGradients, ToyNetworkMatchesFiniteDifferences) {
  Rng rng(21);
  const DType t = DType::f64;
  std::vector<Tensor> inputs = {random_tensor({5, 4}, t, rng), random_tensor({4, 6}, t, rng, -0.5, 0.5),
                                random_tensor({6}, t, rng), random_tensor({6, 6}, t, rng, -0.5, 0.5),
                                random_tensor({6, 3}, t, rng, -0.5, 0.5)};
  auto net = [](const std::vector<Tensor>& x) {
    Tensor h = gelu(add_bias(matmul(x[0], x[1]), x[2]));
    h = gelu(matmul(h, x[3]));
    return log_softmax(matmul(h, x[4]), 1);
  };
  const auto check = testing::check_op_gradient(net, inputs, 22);
  EXPECT_LE(check.max_rel_error, 1e-4);
  EXPECT_EQ(check.entries, 20u + 24 + 6 + 36 + 18);
}

}  // namespace
}  // namespace emforge
