// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "emforge/gradcache.hpp"
#include "emforge/model.hpp"

namespace emforge::cli {

// Small model used by gradcheck: d=16, L=2, H=2.
ModelConfig toy_config();

// Random mixed text / image / image+text batch for the given config.
SequenceBatch random_batch(const ModelConfig& config, std::size_t batch_size, std::size_t negatives_per_query,
                           std::uint64_t seed);

// Relative L2 distance ||a - b|| / ||b|| over all named tensors of b.
double relative_l2(const NamedTensors& a, const NamedTensors& b);

struct EquivalenceRow {
  std::size_t batch_size = 0;
  std::size_t sub_batch_size = 0;
  DType dtype = DType::f64;
  double rel_error = 0.0;
  double loss_abs_diff = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

// Two-phase gradients against direct backprop on the toy model.
EquivalenceRow check_equivalence(std::size_t batch_size, std::size_t sub_batch_size, DType dtype, std::uint64_t seed,
                                 double tau, bool inject_fault = false);

struct FiniteDifferenceResult {
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::string worst;
  bool pass = false;
};

struct FiniteDifferenceOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor for entries whose derivative is ~0.
  double floor = 1e-6;
  std::size_t samples_per_tensor = 6;
  double tau = 0.1;
};

// Central differences of the encode -> InfoNCE loss (f64) against the tape
// gradient, for sampled entries of every parameter tensor.
FiniteDifferenceResult check_finite_differences(const ModelConfig& config, std::uint64_t seed,
                                                const FiniteDifferenceOptions& options = {});

}  // namespace emforge::cli
