// SPDX-License-Identifier: Apache-2.0
#include "emforge/tape.hpp"

#include <algorithm>
#include <unordered_set>

#include "emforge/ops.hpp"

namespace emforge {
namespace {

std::atomic<std::size_t> g_live_elements{0};
std::atomic<std::size_t> g_peak_elements{0};

void add_live(std::size_t n) {
  const std::size_t now = g_live_elements.fetch_add(n) + n;
  std::size_t peak = g_peak_elements.load();
  while (now > peak && !g_peak_elements.compare_exchange_weak(peak, now)) {
  }
}

}  // namespace

void NamedTensors::set(const std::string& name, Tensor value) {
  auto it = index_.find(name);
  if (it != index_.end()) {
    entries_[it->second].second = std::move(value);
    return;
  }
  index_.emplace(name, entries_.size());
  entries_.emplace_back(name, std::move(value));
}

const Tensor& NamedTensors::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("no tensor named '" + name + "'");
  return entries_[it->second].second;
}

void NamedTensors::erase(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) return;
  entries_.erase(entries_.begin() + static_cast<std::ptrdiff_t>(it->second));
  index_.clear();
  for (std::size_t i = 0; i < entries_.size(); ++i) index_.emplace(entries_[i].first, i);
}

std::vector<std::string> NamedTensors::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, _] : entries_) out.push_back(name);
  return out;
}

std::size_t NamedTensors::total_elements() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.numel();
  return n;
}

namespace detail {

TapeState::~TapeState() { release(); }

void TapeState::push(TapeEntry entry) {
  live_elements_ += entry.activation_elements;
  add_live(entry.activation_elements);
  entries.push_back(std::move(entry));
}

void TapeState::release() {
  g_live_elements.fetch_sub(live_elements_);
  live_elements_ = 0;
  entries.clear();
  entries.shrink_to_fit();
}

}  // namespace detail

Tensor record_op(const Tensor& result, const std::vector<const Tensor*>& inputs, BackwardFn backward) {
  std::shared_ptr<detail::TapeState> state;
  for (const Tensor* in : inputs) {
    if (!in->tracked()) continue;
    if (!state) {
      state = in->tape_state();
    } else if (state != in->tape_state()) {
      throw TapeError("operation mixes tensors tracked by different tapes");
    }
  }
  if (!state) return result;
  if (state->consumed) throw TapeError("operation on a tensor whose tape was already replayed");
  detail::TapeEntry entry;
  entry.inputs.reserve(inputs.size());
  for (const Tensor* in : inputs) entry.inputs.push_back(in->tracked() ? in->var() : 0);
  entry.output = state->new_var();
  entry.backward = std::move(backward);
  entry.activation_elements = result.numel();
  const std::size_t var = entry.output;
  state->push(std::move(entry));
  return result.with_var(state, var);
}

Tensor record_op(const Tensor& result, std::initializer_list<const Tensor*> inputs, BackwardFn backward) {
  return record_op(result, std::vector<const Tensor*>(inputs), std::move(backward));
}

Tape::Tape() : state_(std::make_shared<detail::TapeState>()) {}

Tape::~Tape() { state_->release(); }

Tensor Tape::watch(const Tensor& leaf) {
  if (!leaf.defined()) throw TapeError("watch(): undefined tensor");
  if (state_->consumed) throw TapeError("watch() on a replayed tape");
  if (leaf.tracked()) {
    if (leaf.tape_state() == state_) return leaf;
    throw TapeError("watch(): tensor already tracked by another tape");
  }
  return leaf.with_var(state_, state_->new_var());
}

NamedTensors Tape::watch(const NamedTensors& leaves) {
  NamedTensors out;
  for (const auto& [name, t] : leaves) out.set(name, watch(t));
  return out;
}

std::vector<Tensor> Tape::backward(std::span<const Tensor> outputs, std::span<const Tensor> seeds,
                                   std::span<const Tensor> wrt) {
  if (state_->consumed) throw TapeError("tape already replayed; backward may run once per tape");
  if (outputs.size() != seeds.size()) throw TapeError("backward(): outputs and seeds differ in count");
  for (const Tensor& w : wrt) {
    if (!w.tracked() || w.tape_state() != state_) throw TapeError("backward(): gradient requested for untracked tensor");
  }
  state_->consumed = true;

  std::vector<Tensor> grads(state_->num_vars() + 1);
  auto accumulate = [&](std::size_t var, const Tensor& g) {
    if (!grads[var].defined()) {
      grads[var] = g.detach();
    } else {
      grads[var] = add(grads[var], g);
    }
  };

  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const Tensor& out = outputs[i];
    // An untracked output does not depend on any watched tensor.
    if (!out.tracked()) continue;
    if (out.tape_state() != state_) {
      throw TapeError("backward(): output is not produced under this tape");
    }
    if (seeds[i].shape() != out.shape() || seeds[i].dtype() != out.dtype()) {
      throw ShapeError("backward(): seed shape/dtype differs from output " + shape_to_string(out.shape()));
    }
    accumulate(out.var(), seeds[i].detach());
  }

  std::unordered_set<std::size_t> keep;
  for (const Tensor& w : wrt) keep.insert(w.var());

  auto& entries = state_->entries;
  for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
    Tensor g = grads[it->output];
    if (!g.defined()) continue;
    if (!keep.count(it->output)) grads[it->output] = Tensor();
    std::vector<bool> needs(it->inputs.size());
    bool any = false;
    for (std::size_t k = 0; k < it->inputs.size(); ++k) {
      needs[k] = it->inputs[k] != 0;
      any = any || needs[k];
    }
    if (!any) continue;
    std::vector<Tensor> in_grads = it->backward(g, needs);
    for (std::size_t k = 0; k < it->inputs.size(); ++k) {
      if (!needs[k]) continue;
      if (!in_grads[k].defined()) continue;
      accumulate(it->inputs[k], in_grads[k]);
    }
    // Saved activations of this entry are no longer needed.
    it->backward = nullptr;
  }
  state_->release();

  std::vector<Tensor> result;
  result.reserve(wrt.size());
  for (const Tensor& w : wrt) {
    const Tensor& g = grads[w.var()];
    result.push_back(g.defined() ? g : Tensor::zeros(w.shape(), w.dtype()));
  }
  return result;
}

std::vector<Tensor> Tape::backward(const Tensor& scalar_loss, std::span<const Tensor> wrt) {
  if (scalar_loss.numel() != 1) {
    throw ShapeError("backward(): loss must be a scalar, got shape " + shape_to_string(scalar_loss.shape()));
  }
  const Tensor seed = Tensor::full(scalar_loss.shape(), 1.0, scalar_loss.dtype());
  return backward(std::span<const Tensor>(&scalar_loss, 1), std::span<const Tensor>(&seed, 1), wrt);
}

NamedTensors grad(const Tensor& loss, Tape& tape, const NamedTensors& wrt) {
  std::vector<Tensor> leaves;
  leaves.reserve(wrt.size());
  for (const auto& [name, t] : wrt) {
    if (!t.tracked()) throw TapeError("grad(): parameter '" + name + "' is not tracked");
    leaves.push_back(t);
  }
  auto grads = tape.backward(loss, leaves);
  NamedTensors out;
  std::size_t i = 0;
  for (const auto& [name, _] : wrt) out.set(name, grads[i++]);
  return out;
}

std::size_t TapeStats::live_elements() { return g_live_elements.load(); }
std::size_t TapeStats::peak_elements() { return g_peak_elements.load(); }
void TapeStats::reset_peak() { g_peak_elements.store(g_live_elements.load()); }

}  // namespace emforge
