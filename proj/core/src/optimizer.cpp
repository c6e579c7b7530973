// SPDX-License-Identifier: Apache-2.0
#include "emforge/optimizer.hpp"

#include <algorithm>
#include <cmath>

namespace emforge {

AdamWState init_adamw(const NamedTensors& params, const std::vector<std::string>& trainable) {
  AdamWState state;
  for (const auto& name : trainable) {
    const Tensor& p = params.at(name);
    state.first_moment.set(name, Tensor::zeros(p.shape(), p.dtype()));
    state.second_moment.set(name, Tensor::zeros(p.shape(), p.dtype()));
  }
  return state;
}

AdamWResult adamw_update(const NamedTensors& params, const NamedTensors& grads, const AdamWState& state, double lr,
                         const AdamWConfig& config) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be finite and non-negative");
  AdamWResult out{params, state};
  out.state.step = state.step + 1;
  const double t = static_cast<double>(out.state.step);
  const double bias1 = 1.0 - std::pow(config.beta1, t);
  const double bias2 = 1.0 - std::pow(config.beta2, t);
  for (const auto& [name, g] : grads) {
    const Tensor& p = params.at(name);
    if (!state.first_moment.contains(name)) throw ConfigError("optimizer: no state for '" + name + "'");
    if (g.shape() != p.shape() || g.dtype() != p.dtype()) throw ShapeError("optimizer: gradient shape mismatch for " + name);
    const double decay = p.rank() == 2 ? config.weight_decay : 0.0;
    dispatch(p.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto ps = p.data<T>();
      auto gs = g.data<T>();
      auto ms = state.first_moment.at(name).data<T>();
      auto vs = state.second_moment.at(name).data<T>();
      const std::size_t n = ps.size();
      std::vector<T> np(n), nm(n), nv(n);
      const T b1 = T(config.beta1), b2 = T(config.beta2), eps = T(config.eps);
      const T c1 = T(bias1), c2 = T(bias2), step = T(lr), wd = T(decay);
      for (std::size_t i = 0; i < n; ++i) {
        nm[i] = b1 * ms[i] + (T(1) - b1) * gs[i];
        nv[i] = b2 * vs[i] + (T(1) - b2) * gs[i] * gs[i];
        const T update = (nm[i] / c1) / (std::sqrt(nv[i] / c2) + eps) + wd * ps[i];
        np[i] = ps[i] - step * update;
      }
      Tensor updated = make_tensor<T>(p.shape(), std::move(np));
      check_finite(updated, "adamw_update");
      out.params.set(name, updated);
      out.state.first_moment.set(name, make_tensor<T>(p.shape(), std::move(nm)));
      out.state.second_moment.set(name, make_tensor<T>(p.shape(), std::move(nv)));
    });
  }
  return out;
}

double scheduled_lr(double base_lr, std::size_t step, std::size_t total_steps) {
  const auto warmup = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(0.05 * static_cast<double>(total_steps))));
  if (step >= warmup) return base_lr;
  return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
}

}  // namespace emforge
