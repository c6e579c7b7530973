// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "emforge/named_tensors.hpp"

namespace emforge {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;  // decoupled; rank-2 tensors only
};

struct AdamWState {
  std::uint64_t step = 0;
  NamedTensors first_moment;
  NamedTensors second_moment;
};

// Zero moments for the named parameters.
AdamWState init_adamw(const NamedTensors& params, const std::vector<std::string>& trainable);

// Returns updated copies of `params` and `state`; neither input is modified.
// Only names present in `grads` are updated.
struct AdamWResult {
  NamedTensors params;
  AdamWState state;
};
AdamWResult adamw_update(const NamedTensors& params, const NamedTensors& grads, const AdamWState& state, double lr,
                         const AdamWConfig& config = {});

// Linear warmup over the first 5% of steps (at least one), then constant.
double scheduled_lr(double base_lr, std::size_t step, std::size_t total_steps);

}  // namespace emforge
