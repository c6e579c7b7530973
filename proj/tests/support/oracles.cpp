// SPDX-License-Identifier: Apache-2.0
#include "oracles.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <unistd.h>

#include "emforge/encoder.hpp"
#include "emforge/ops.hpp"
#include "emforge/tape.hpp"

namespace emforge::testing {

Tensor random_tensor(const Shape& shape, DType dtype, Rng& rng, double lo, double hi) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_values(shape, v, dtype);
}

double rel_error(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

Tensor numeric_gradient(const ScalarFn& fn, const std::vector<Tensor>& inputs, std::size_t which, double step) {
  const Tensor& x = inputs[which];
  std::vector<double> base = x.to_vector();
  std::vector<double> g(base.size());
  std::vector<Tensor> probe = inputs;
  for (std::size_t i = 0; i < base.size(); ++i) {
    std::vector<double> v = base;
    v[i] = base[i] + step;
    probe[which] = Tensor::from_values(x.shape(), v, x.dtype());
    const double up = fn(probe);
    v[i] = base[i] - step;
    probe[which] = Tensor::from_values(x.shape(), v, x.dtype());
    const double down = fn(probe);
    g[i] = (up - down) / (2 * step);
  }
  return Tensor::from_values(x.shape(), g, x.dtype());
}

GradCheck check_op_gradient(const TensorFn& op, const std::vector<Tensor>& inputs, std::uint64_t seed, double step,
                            double floor) {
  const Tensor probe_out = op(inputs);
  Rng rng(seed);
  const Tensor weights = random_tensor(probe_out.shape(), probe_out.dtype(), rng, -1.0, 1.0);
  auto reduce = [&](const std::vector<Tensor>& xs) { return sum(mul(op(xs), weights)); };

  Tape tape;
  std::vector<Tensor> watched;
  for (const Tensor& x : inputs) watched.push_back(tape.watch(x));
  const Tensor loss = reduce(watched);
  const std::vector<Tensor> grads = tape.backward(loss, watched);

  GradCheck out;
  for (std::size_t w = 0; w < inputs.size(); ++w) {
    const Tensor fd = numeric_gradient([&](const std::vector<Tensor>& xs) { return reduce(xs).item(); }, inputs, w, step);
    const std::vector<double> a = grads[w].to_vector();
    const std::vector<double> b = fd.to_vector();
    for (std::size_t i = 0; i < a.size(); ++i) {
      out.max_rel_error = std::max(out.max_rel_error, rel_error(a[i], b[i], floor));
      ++out.entries;
    }
  }
  return out;
}

SequenceBatch fixed_shape_random_batch(const ModelConfig& config, std::size_t batch_size, std::size_t text_len,
                                       std::uint64_t seed) {
  Rng rng(seed);
  auto text = [&] {
    std::string s(text_len, 'a');
    for (char& ch : s) ch = static_cast<char>('a' + rng.below(26));
    return s;
  };
  const std::size_t side = 2 * config.patch_size;
  SequenceBatch batch;
  for (std::size_t i = 0; i < batch_size; ++i) {
    batch.queries.push_back(build_sequence(text(), std::nullopt, config));
    const Tensor image = random_tensor({config.image_channels, side, side}, DType::f32, rng, 0.0, 1.0);
    batch.targets.push_back(build_sequence("[IMG] " + text(), image, config));
  }
  return batch;
}

TempDir::TempDir() {
  static std::atomic<int> counter{0};
  const auto base = std::filesystem::temp_directory_path();
  for (int attempt = 0; attempt < 100; ++attempt) {
    auto candidate = base / ("emforge-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    if (std::filesystem::create_directory(candidate)) {
      path_ = candidate;
      return;
    }
  }
  throw std::runtime_error("TempDir: could not create a directory under " + base.string());
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  out << contents;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace emforge::testing
