#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "emforge/contrastive.hpp"
#include "emforge/ops.hpp"
#include "oracles.hpp"

namespace emforge {
namespace {

using testing::random_tensor;

EmbeddingVector vec(std::initializer_list<double> v) {
  return {Tensor::from_values({v.size()}, v, DType::f64), false};
}

Tensor rows(std::size_t n, std::size_t d, std::initializer_list<double> v) {
  return Tensor::from_values({n, d}, v, DType::f64);
}

// Direct per-query evaluation: -log(phi(q, t+) / sum over candidates of phi).
double scalar_info_nce(const Tensor& q, const Tensor& t, const Tensor& hard, std::size_t k, double tau) {
  const std::size_t b = q.dim(0), d = q.dim(1);
  auto row = [d](const Tensor& x, std::size_t i) {
    std::vector<double> r(d);
    for (std::size_t c = 0; c < d; ++c) r[c] = x.at(i * d + c);
    return r;
  };
  auto cosine = [](const std::vector<double>& a, const std::vector<double>& c) {
    double dot = 0, na = 0, nc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      dot += a[i] * c[i];
      na += a[i] * a[i];
      nc += c[i] * c[i];
    }
    return dot / std::sqrt(na * nc);
  };
  double total = 0;
  for (std::size_t i = 0; i < b; ++i) {
    std::vector<double> logits;
    for (std::size_t j = 0; j < b; ++j) logits.push_back(cosine(row(q, i), row(t, j)) / tau);
    for (std::size_t j = 0; j < k; ++j) logits.push_back(cosine(row(q, i), row(hard, i * k + j)) / tau);
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0;
    for (double l : logits) z += std::exp(l - mx);
    total += -(logits[i] - mx - std::log(z));
  }
  return total / static_cast<double>(b);
}

TEST(Similarity, Examples) {
  const auto e = vec({0.6, 0.8});
  EXPECT_NEAR(similarity(e, e, 0.02) / std::exp(50.0), 1.0, 1e-12);
  EXPECT_NEAR(log_similarity(e, e, 0.02), 50.0, 1e-12);
  EXPECT_NEAR(similarity(vec({1, 0}), vec({0, 3}), 0.3), 1.0, 1e-15);
  EXPECT_NEAR(similarity(vec({1, 0}), vec({-2, 0}), 0.02) / std::exp(-50.0), 1.0, 1e-12);
}

TEST(Similarity, Errors) {
  EXPECT_THROW(similarity(vec({0, 0}), vec({1, 0}), 0.1), NumericError);
  EXPECT_THROW(similarity(vec({1, 0}), vec({1, 0}), 0.0), ConfigError);
  EXPECT_THROW(similarity(vec({1, 0}), vec({1, 0}), -1.0), ConfigError);
  EXPECT_THROW(similarity(vec({1, 0}), vec({1, 0, 0}), 0.1), ShapeError);
}

TEST(ScoreMatrix, OrthonormalPairs) {
  const Tensor q = rows(2, 2, {1, 0, 0, 1});
  const Tensor s = build_score_matrix(q, q, Tensor(), 0, 0.02);
  ASSERT_EQ(s.shape(), (Shape{2, 2}));
  EXPECT_NEAR(s.at(0), 50.0, 1e-12);
  EXPECT_NEAR(s.at(3), 50.0, 1e-12);
  EXPECT_NEAR(s.at(1), 0.0, 1e-15);
  EXPECT_NEAR(s.at(2), 0.0, 1e-15);
}

TEST(ScoreMatrix, HardNegativeColumnsFollowInBatchColumns) {
  Rng rng(1);
  const Tensor q = random_tensor({3, 4}, DType::f64, rng), t = random_tensor({3, 4}, DType::f64, rng);
  const Tensor h = random_tensor({6, 4}, DType::f64, rng);
  const Tensor s = build_score_matrix(q, t, h, 2, 0.5);
  EXPECT_EQ(s.shape(), (Shape{3, 5}));
  EXPECT_THROW(build_score_matrix(q, t, h, 3, 0.5), ShapeError);
  EXPECT_THROW(build_score_matrix(q, random_tensor({3, 5}, DType::f64, rng), Tensor(), 0, 0.5), ShapeError);
}

TEST(InfoNce, SinglePairIsZero) {
  TrainBatch b{rows(1, 2, {1, 0}), rows(1, 2, {0.3, 0.9}), Tensor(), 0, 0.02};
  EXPECT_EQ(info_nce(b).value(), 0.0);
}

TEST(InfoNce, UniformScoresGiveLogN) {
  for (std::size_t n : {2u, 4u, 7u, 32u}) {
    std::vector<double> same(n * 3);
    for (std::size_t i = 0; i < n; ++i) {
      same[i * 3] = 0.5;
      same[i * 3 + 1] = -1.0;
      same[i * 3 + 2] = 2.0;
    }
    const Tensor x = Tensor::from_values({n, 3}, same, DType::f64);
    TrainBatch b{x, x, Tensor(), 0, 0.02};
    EXPECT_NEAR(info_nce(b).value(), std::log(static_cast<double>(n)), 1e-12) << n;
  }
  // |N_i| = 3 through one in-batch and two hard negatives, all orthogonal.
  const Tensor q = rows(2, 4, {1, 0, 0, 0, 0, 1, 0, 0});
  const Tensor t = rows(2, 4, {0, 0, 1, 0, 0, 0, 0, 1});
  const Tensor h = rows(4, 4, {0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 1, 0});
  EXPECT_NEAR(info_nce({q, t, h, 2, 0.02}).value(), std::log(4.0), 1e-12);
}

TEST(InfoNce, ScalarExample) {
  TrainBatch b{rows(1, 2, {1, 0}), rows(1, 2, {1, 0}), rows(1, 2, {0, 1}), 1, 1.0};
  EXPECT_NEAR(info_nce(b).value(), std::log(1.0 + std::exp(-1.0)), 1e-15);
  EXPECT_NEAR(info_nce(b).value(), 0.313262, 1e-6);
}

TEST(InfoNce, MatchesPerQueryEvaluation) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t b = 2 + rng.below(6), d = 2 + rng.below(6), k = rng.below(3);
    const double tau = rng.uniform(0.02, 1.0);
    const Tensor q = random_tensor({b, d}, DType::f64, rng), t = random_tensor({b, d}, DType::f64, rng);
    const Tensor h = k ? random_tensor({b * k, d}, DType::f64, rng) : Tensor();
    const double got = info_nce({q, t, h, k, tau}).value();
    EXPECT_NEAR(got, scalar_info_nce(q, t, h, k, tau), 1e-12 * std::max(1.0, got));
    EXPECT_GE(got, 0.0);
  }
}

TEST(InfoNce, InvariantToJointPermutation) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t b = 2 + rng.below(8), d = 3;
    const Tensor q = random_tensor({b, d}, DType::f64, rng), t = random_tensor({b, d}, DType::f64, rng);
    std::vector<std::size_t> perm(b);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    const double base = info_nce({q, t, Tensor(), 0, 0.1}).value();
    const double permuted = info_nce({gather_rows(q, perm), gather_rows(t, perm), Tensor(), 0, 0.1}).value();
    EXPECT_NEAR(base, permuted, 1e-12);
  }
}

TEST(InfoNce, DecreasesAsPositiveAligns) {
  // Rotating t_0 toward q_0 raises only cos(q_0, t_0) among row 0's scores
  // and the column-0 entries of other rows stay fixed by orthogonality.
  const double tau = 0.1;
  double previous = INFINITY;
  for (double angle = 1.5; angle >= 0.0; angle -= 0.1) {
    const Tensor q = rows(2, 3, {1, 0, 0, 0, 1, 0});
    const Tensor t = rows(2, 3, {std::cos(angle), 0, std::sin(angle), 0.2, 1, 0});
    const double loss = info_nce({q, t, Tensor(), 0, tau}).value();
    EXPECT_LT(loss, previous);
    previous = loss;
  }
}

TEST(InfoNce, GradientsMatchFiniteDifferences) {
  Rng rng(4);
  for (std::uint64_t trial = 0; trial < 10; ++trial) {
    const std::size_t b = 2 + rng.below(4), d = 3, k = rng.below(3);
    std::vector<Tensor> inputs{random_tensor({b, d}, DType::f64, rng), random_tensor({b, d}, DType::f64, rng)};
    if (k) inputs.push_back(random_tensor({b * k, d}, DType::f64, rng));
    auto op = [k](const std::vector<Tensor>& x) {
      return info_nce({x[0], x[1], k ? x[2] : Tensor(), k, 0.2}).loss;
    };
    EXPECT_LE(testing::check_op_gradient(op, inputs, trial).max_rel_error, 1e-4) << trial;
  }
}

TEST(InfoNce, LossIsTrackedThroughEmbeddings) {
  Tape tape;
  const Tensor q = tape.watch(rows(2, 2, {1, 0, 0, 1}));
  const Tensor t = tape.watch(rows(2, 2, {1, 1, -1, 1}));
  const LossValue lv = info_nce({q, t, Tensor(), 0, 0.5});
  EXPECT_TRUE(lv.loss.tracked());
  EXPECT_FALSE(lv.scores.tracked());
  EXPECT_EQ(lv.scores.shape(), (Shape{2, 2}));
}

}  // namespace
}  // namespace emforge
