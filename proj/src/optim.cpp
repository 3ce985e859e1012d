// SPDX-License-Identifier: Apache-2.0
#include "tiue/optim.hpp"

#include <cmath>

namespace tiue {

template <class T>
AdamState<T>::AdamState(const ParamStore<T>& params, AdamConfig cfg) : config(cfg) {
  for (const auto& e : params.entries()) {
    m.emplace_back(e.value.shape());
    v.emplace_back(e.value.shape());
  }
}

template <class T>
void adam_step(ParamStore<T>& params, const std::vector<Tensor<T>>& grads, AdamState<T>& state) {
  auto& entries = params.entries();
  if (grads.size() != entries.size() || state.m.size() != entries.size() || state.v.size() != entries.size())
    fail(ErrorCode::ShapeMismatch, "adam_step: parameter/gradient/moment counts differ");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    check_same_shape(entries[i].value, grads[i], "adam_step gradient");
    check_same_shape(entries[i].value, state.m[i], "adam_step first moment");
    check_same_shape(entries[i].value, state.v[i], "adam_step second moment");
  }
  const auto& c = state.config;
  state.step += 1;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    T* p = entries[i].value.data();
    T* m = state.m[i].data();
    T* v = state.v[i].data();
    const T* g = grads[i].data();
    for (std::int64_t j = 0; j < grads[i].numel(); ++j) {
      const double gj = g[j];
      const double mj = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
      const double vj = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double update = c.lr * (mj / bc1) / (std::sqrt(vj / bc2) + c.eps);
      p[j] = static_cast<T>(static_cast<double>(p[j]) - update);
    }
  }
}

template <class T>
void ema_update(ParamStore<T>& shadow, const ParamStore<T>& params, double decay) {
  if (!(decay >= 0.0 && decay <= 1.0)) fail(ErrorCode::DecayOutOfRange, "ema decay " + std::to_string(decay));
  auto& dst = shadow.entries();
  const auto& src = params.entries();
  if (dst.size() != src.size()) fail(ErrorCode::ShapeMismatch, "ema_update: parameter counts differ");
  for (std::size_t i = 0; i < dst.size(); ++i) check_same_shape(dst[i].value, src[i].value, "ema_update");
  if (decay == 1.0) return;
  for (std::size_t i = 0; i < dst.size(); ++i) {
    T* s = dst[i].value.data();
    const T* p = src[i].value.data();
    for (std::int64_t j = 0; j < dst[i].value.numel(); ++j)
      s[j] = static_cast<T>(decay * static_cast<double>(s[j]) + (1.0 - decay) * static_cast<double>(p[j]));
  }
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step(ParamStore<float>&, const std::vector<Tensor<float>>&, AdamState<float>&);
template void adam_step(ParamStore<double>&, const std::vector<Tensor<double>>&, AdamState<double>&);
template void ema_update(ParamStore<float>&, const ParamStore<float>&, double);
template void ema_update(ParamStore<double>&, const ParamStore<double>&, double);

}  // namespace tiue
