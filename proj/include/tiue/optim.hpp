// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "tiue/params.hpp"

namespace tiue {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
struct AdamState {
  AdamConfig config;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::int64_t step = 0;

  AdamState() = default;
  AdamState(const ParamStore<T>& params, AdamConfig cfg);
};

/// Bias-corrected Adam. `grads` is aligned with `params.entries()`.
template <class T>
void adam_step(ParamStore<T>& params, const std::vector<Tensor<T>>& grads, AdamState<T>& state);

/// shadow <- decay * shadow + (1 - decay) * params, elementwise.
template <class T>
void ema_update(ParamStore<T>& shadow, const ParamStore<T>& params, double decay);

}  // namespace tiue
