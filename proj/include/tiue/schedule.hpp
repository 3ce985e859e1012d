// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tiue/tensor.hpp"

namespace tiue {

/// Sentinel index for the step after the last decoder pass.
inline constexpr std::int64_t kTerminal = -1;

enum class BetaKind { Linear, ScaledLinear };
enum class Spacing { Trailing, Leading };

std::string to_string(BetaKind k);
std::string to_string(Spacing s);
BetaKind beta_kind_from_string(const std::string& s);
Spacing spacing_from_string(const std::string& s);

struct ScheduleParams {
  std::int64_t steps = 1000;
  double beta_start = 8.5e-4;
  double beta_end = 1.2e-2;
  BetaKind kind = BetaKind::ScaledLinear;
};

/// Discrete noise schedule. alpha_bars[t] is the cumulative signal retention
/// at index t; the terminal target uses alpha_bar_final.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;
  NoiseSchedule(ScheduleParams params, std::vector<double> betas);

  const ScheduleParams& params() const noexcept { return params_; }
  std::int64_t steps() const noexcept { return static_cast<std::int64_t>(betas_.size()); }
  const std::vector<double>& betas() const noexcept { return betas_; }
  const std::vector<double>& alpha_bars() const noexcept { return alpha_bars_; }
  double alpha_bar_final() const noexcept { return alpha_bar_final_; }

  /// ᾱ at a schedule index or at kTerminal.
  double alpha_bar(std::int64_t index) const;
  bool valid_index(std::int64_t index) const noexcept { return index >= 0 && index < steps(); }

 private:
  ScheduleParams params_;
  std::vector<double> betas_;
  std::vector<double> alpha_bars_;
  double alpha_bar_final_ = 1.0;
};

NoiseSchedule build_schedule(std::int64_t steps, double beta_start, double beta_end, BetaKind kind);
inline NoiseSchedule build_schedule(const ScheduleParams& p) { return build_schedule(p.steps, p.beta_start, p.beta_end, p.kind); }
/// Arbitrary strictly decreasing ᾱ table (used by property tests).
NoiseSchedule schedule_from_alpha_bars(std::vector<double> alpha_bars);

/// Coefficients of one deterministic update z_prev = scale * z_t + eps_coeff * eps.
struct DdimCoeffs {
  double scale;
  double eps_coeff;
};

DdimCoeffs ddim_coeffs(double alpha_bar_t, double alpha_bar_prev);

template <class T>
Tensor<T> ddim_step(const Tensor<T>& z_t, const Tensor<T>& eps, std::int64_t t, std::int64_t t_prev, const NoiseSchedule& sched);

struct TimestepSelection {
  std::vector<std::int64_t> timesteps;  // strictly decreasing
  std::int64_t terminal = kTerminal;
};

TimestepSelection select_timesteps(std::int64_t k, std::int64_t steps, Spacing spacing = Spacing::Trailing);

/// Loop-free sampling plan: z0 = S * eps + sum_j E[j] * eps_j with j following `timesteps`.
struct SamplerPlan {
  std::int64_t k = 0;
  std::vector<std::int64_t> timesteps;
  std::int64_t terminal = kTerminal;
  double s = 1.0;
  std::vector<double> e;  // aligned with timesteps: E_K .. E_1

  /// Index that follows timesteps[j] in the sequential chain.
  std::int64_t prev_of(std::size_t j) const { return j + 1 < timesteps.size() ? timesteps[j + 1] : terminal; }
};

SamplerPlan loopfree_coeffs(std::span<const std::int64_t> timesteps, std::int64_t terminal, const NoiseSchedule& sched);
SamplerPlan make_plan(std::int64_t k, const NoiseSchedule& sched, Spacing spacing = Spacing::Trailing);
void validate_plan(const SamplerPlan& plan, const NoiseSchedule& sched);

/// z0 = S * eps + E[0] * preds[0] + ... accumulated in that fixed order.
template <class T>
Tensor<T> combine_loopfree(const SamplerPlan& plan, const Tensor<T>& eps, std::span<const Tensor<T>> preds);

}  // namespace tiue
