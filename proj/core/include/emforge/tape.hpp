// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "emforge/named_tensors.hpp"
#include "emforge/tensor.hpp"

namespace emforge {

// Computes input gradients from the output gradient. needs[i] is false for
// inputs that are not tracked; the corresponding result may be left undefined.
using BackwardFn = std::function<std::vector<Tensor>(const Tensor& grad_out, const std::vector<bool>& needs)>;

namespace detail {

struct TapeEntry {
  std::vector<std::size_t> inputs;  // var ids, 0 for untracked inputs
  std::size_t output = 0;
  BackwardFn backward;
  std::size_t activation_elements = 0;
};

class TapeState {
 public:
  ~TapeState();

  std::size_t new_var() { return next_var_++; }
  std::size_t num_vars() const { return next_var_ - 1; }
  void push(TapeEntry entry);
  void release();

  std::vector<TapeEntry> entries;
  bool consumed = false;

 private:
  std::size_t next_var_ = 1;
  std::size_t live_elements_ = 0;
};

}  // namespace detail

// Records `result` as the output of an operation on `inputs`. Returns the
// result untouched when no input is tracked, otherwise a tracked copy.
Tensor record_op(const Tensor& result, std::initializer_list<const Tensor*> inputs, BackwardFn backward);
Tensor record_op(const Tensor& result, const std::vector<const Tensor*>& inputs, BackwardFn backward);

// Ordered record of operations on tracked tensors. Backward replays entries in
// exact reverse construction order; gradient contributions are summed in that
// order. A tape can be replayed once.
class Tape {
 public:
  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape();

  Tensor watch(const Tensor& leaf);
  NamedTensors watch(const NamedTensors& leaves);

  // Seeds each output with the matching seed gradient, replays the tape and
  // returns d/d(wrt) for each wrt tensor (zeros when untouched).
  std::vector<Tensor> backward(std::span<const Tensor> outputs, std::span<const Tensor> seeds,
                               std::span<const Tensor> wrt);
  std::vector<Tensor> backward(const Tensor& scalar_loss, std::span<const Tensor> wrt);

  std::size_t num_ops() const { return state_->entries.size(); }
  bool consumed() const { return state_->consumed; }

 private:
  std::shared_ptr<detail::TapeState> state_;
};

// dloss/dtheta for every named tensor in `wrt`, each of which must be tracked
// by `tape`.
NamedTensors grad(const Tensor& loss, Tape& tape, const NamedTensors& wrt);

// Process-wide instrumentation: number of activation elements held by live
// tapes, and the peak since the last reset.
struct TapeStats {
  static std::size_t live_elements();
  static std::size_t peak_elements();
  static void reset_peak();
};

}  // namespace emforge
