// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "tiue/schedule.hpp"
#include "tiue/unet.hpp"

namespace tiue {

/// A UNet, its parameters, and the schedule it was trained on.
template <class T>
struct DiffusionModel {
  UNet<T> net;
  ParamStore<T> params;
  NoiseSchedule schedule;
};

enum class SampleMode { Ddim, LoopfreeSeq, LoopfreePar };

std::string to_string(SampleMode m);
SampleMode sample_mode_from_string(const std::string& s);

template <class T>
struct SampleRequest {
  std::uint64_t seed = 0;
  /// Global index of the first batch item; noise for item b is keyed by (seed, first_index + b).
  std::uint64_t first_index = 0;
  /// (batch, cond_dim)
  Tensor<T> cond;
  SampleMode mode = SampleMode::Ddim;
  std::int64_t steps = 0;
  std::optional<SamplerPlan> plan;
  double guidance_scale = 1.0;
  int thread_count = 1;
  Spacing spacing = Spacing::Trailing;

  std::int64_t batch() const { return cond.empty() ? 0 : cond.dim(0); }
};

/// Standard-normal starting noise for a request.
template <class T>
Tensor<T> initial_noise(const UNetConfig& cfg, std::int64_t batch, std::uint64_t seed, std::uint64_t first_index);

/// Iterated multi-step DDIM with the full UNet at every step. Output clamped to [-1, 1].
template <class T>
Tensor<T> sample_ddim(const DiffusionModel<T>& model, const SampleRequest<T>& req);

/// Noise predictions eps^t for every plan step from a single encoder pass at the key step.
/// Parallel execution deposits each prediction into its own slot.
template <class T>
std::vector<Tensor<T>> loopfree_predictions(const DiffusionModel<T>& model, const SamplerPlan& plan, const Tensor<T>& noise,
                                            const Tensor<T>& cond, bool parallel, int thread_count);

/// One encoder pass, K decoder passes, closed-form combination. Output clamped to [-1, 1].
template <class T>
Tensor<T> sample_loopfree(const DiffusionModel<T>& model, const SampleRequest<T>& req);

/// Dispatch on req.mode.
template <class T>
Tensor<T> sample(const DiffusionModel<T>& model, const SampleRequest<T>& req);

/// Samples for `n` condition rows in chunks of `chunk`; item i keeps noise index first_index + i.
template <class T>
Tensor<T> sample_many(const DiffusionModel<T>& model, SampleRequest<T> req, const std::vector<std::vector<double>>& conds, std::int64_t chunk = 32);

/// Spherical interpolation between two condition vectors at n evenly spaced points;
/// linear when either is zero or they are colinear.
std::vector<std::vector<double>> interpolate_conditions(const std::vector<double>& c1, const std::vector<double>& c2, int n);

/// round(255 * (clamp(z, -1, 1) + 1) / 2)
std::uint8_t to_pixel(double z);

template <class T>
Tensor<T> clamp_unit(Tensor<T> z);

}  // namespace tiue
