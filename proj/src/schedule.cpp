// SPDX-License-Identifier: Apache-2.0
#include "tiue/schedule.hpp"

#include <cmath>

namespace tiue {

std::string to_string(BetaKind k) { return k == BetaKind::Linear ? "linear" : "scaled_linear"; }
std::string to_string(Spacing s) { return s == Spacing::Trailing ? "trailing" : "leading"; }

BetaKind beta_kind_from_string(const std::string& s) {
  if (s == "linear") return BetaKind::Linear;
  if (s == "scaled_linear") return BetaKind::ScaledLinear;
  fail(ErrorCode::InvalidRange, "unknown beta schedule kind '" + s + "'");
}

Spacing spacing_from_string(const std::string& s) {
  if (s == "trailing") return Spacing::Trailing;
  if (s == "leading") return Spacing::Leading;
  fail(ErrorCode::InvalidRange, "unknown timestep spacing '" + s + "'");
}

NoiseSchedule::NoiseSchedule(ScheduleParams params, std::vector<double> betas) : params_(params), betas_(std::move(betas)) {
  if (betas_.empty()) fail(ErrorCode::InvalidRange, "schedule needs at least one step");
  alpha_bars_.resize(betas_.size());
  double prod = 1.0;
  for (std::size_t i = 0; i < betas_.size(); ++i) {
    if (!(betas_[i] > 0.0 && betas_[i] < 1.0)) fail(ErrorCode::InvalidRange, "beta outside (0,1)");
    prod *= 1.0 - betas_[i];
    alpha_bars_[i] = prod;
  }
  alpha_bar_final_ = 1.0 - betas_[0];
  params_.steps = static_cast<std::int64_t>(betas_.size());
}

double NoiseSchedule::alpha_bar(std::int64_t index) const {
  if (index == kTerminal) return alpha_bar_final_;
  if (!valid_index(index)) fail(ErrorCode::InvalidTimestep, "index " + std::to_string(index) + " outside [0," + std::to_string(steps()) + ")");
  return alpha_bars_[static_cast<std::size_t>(index)];
}

NoiseSchedule build_schedule(std::int64_t steps, double beta_start, double beta_end, BetaKind kind) {
  if (steps < 1) fail(ErrorCode::InvalidRange, "schedule step count must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    fail(ErrorCode::InvalidRange, "need 0 < beta_start <= beta_end < 1");
  std::vector<double> betas(static_cast<std::size_t>(steps));
  const double denom = steps > 1 ? static_cast<double>(steps - 1) : 1.0;
  for (std::int64_t i = 0; i < steps; ++i) {
    const double f = static_cast<double>(i) / denom;
    if (kind == BetaKind::Linear) {
      betas[static_cast<std::size_t>(i)] = beta_start + (beta_end - beta_start) * f;
    } else {
      const double r = std::sqrt(beta_start) + (std::sqrt(beta_end) - std::sqrt(beta_start)) * f;
      betas[static_cast<std::size_t>(i)] = r * r;
    }
  }
  return NoiseSchedule(ScheduleParams{steps, beta_start, beta_end, kind}, std::move(betas));
}

NoiseSchedule schedule_from_alpha_bars(std::vector<double> alpha_bars) {
  if (alpha_bars.empty()) fail(ErrorCode::InvalidRange, "empty alpha_bar table");
  std::vector<double> betas(alpha_bars.size());
  double prev = 1.0;
  for (std::size_t i = 0; i < alpha_bars.size(); ++i) {
    if (!(alpha_bars[i] > 0.0 && alpha_bars[i] < prev)) fail(ErrorCode::InvalidRange, "alpha_bars must be strictly decreasing in (0,1)");
    betas[i] = 1.0 - alpha_bars[i] / prev;
    prev = alpha_bars[i];
  }
  ScheduleParams p;
  p.steps = static_cast<std::int64_t>(betas.size());
  p.beta_start = betas.front();
  p.beta_end = betas.back();
  return NoiseSchedule(p, std::move(betas));
}

DdimCoeffs ddim_coeffs(double alpha_bar_t, double alpha_bar_prev) {
  const double scale = std::sqrt(alpha_bar_prev / alpha_bar_t);
  const double eps_coeff = std::sqrt(alpha_bar_prev) * (std::sqrt(1.0 / alpha_bar_prev - 1.0) - std::sqrt(1.0 / alpha_bar_t - 1.0));
  return {scale, eps_coeff};
}

namespace {

void check_step(std::int64_t t, std::int64_t t_prev, const NoiseSchedule& sched) {
  if (!sched.valid_index(t)) fail(ErrorCode::InvalidTimestep, "t=" + std::to_string(t) + " outside schedule");
  if (t_prev != kTerminal && !sched.valid_index(t_prev)) fail(ErrorCode::InvalidTimestep, "t_prev=" + std::to_string(t_prev) + " outside schedule");
  if (sched.alpha_bar(t_prev) < sched.alpha_bar(t))
    fail(ErrorCode::InvalidTimestep, "DDIM step must move toward lower noise (t=" + std::to_string(t) + ", t_prev=" + std::to_string(t_prev) + ")");
}

}  // namespace

template <class T>
Tensor<T> ddim_step(const Tensor<T>& z_t, const Tensor<T>& eps, std::int64_t t, std::int64_t t_prev, const NoiseSchedule& sched) {
  check_same_shape(z_t, eps, "ddim_step");
  check_step(t, t_prev, sched);
  SamplerPlan single;
  single.k = 1;
  single.timesteps = {t};
  single.terminal = t_prev;
  const auto c = ddim_coeffs(sched.alpha_bar(t), sched.alpha_bar(t_prev));
  single.s = c.scale;
  single.e = {c.eps_coeff};
  return combine_loopfree<T>(single, z_t, std::span<const Tensor<T>>(&eps, 1));
}

TimestepSelection select_timesteps(std::int64_t k, std::int64_t steps, Spacing spacing) {
  if (steps < 1 || k < 1 || k > steps) fail(ErrorCode::InvalidK, "need 1 <= K <= T (K=" + std::to_string(k) + ", T=" + std::to_string(steps) + ")");
  TimestepSelection out;
  for (std::int64_t i = k; i >= 1; --i) {
    std::int64_t idx = 0;
    if (spacing == Spacing::Trailing)
      idx = std::llround(static_cast<double>(i) * static_cast<double>(steps) / static_cast<double>(k)) - 1;
    else
      idx = (i - 1) * steps / k;
    out.timesteps.push_back(idx);
  }
  return out;
}

SamplerPlan loopfree_coeffs(std::span<const std::int64_t> timesteps, std::int64_t terminal, const NoiseSchedule& sched) {
  if (timesteps.empty()) fail(ErrorCode::InvalidTimestep, "plan needs at least one timestep");
  for (std::size_t j = 0; j < timesteps.size(); ++j) {
    if (!sched.valid_index(timesteps[j])) fail(ErrorCode::InvalidTimestep, "timestep " + std::to_string(timesteps[j]) + " outside schedule");
    if (j > 0 && timesteps[j] >= timesteps[j - 1]) fail(ErrorCode::InvalidTimestep, "timesteps must be strictly decreasing");
  }
  if (terminal != kTerminal && (!sched.valid_index(terminal) || terminal >= timesteps.back()))
    fail(ErrorCode::InvalidTimestep, "terminal index must follow the last timestep");

  SamplerPlan plan;
  plan.k = static_cast<std::int64_t>(timesteps.size());
  plan.timesteps.assign(timesteps.begin(), timesteps.end());
  plan.terminal = terminal;
  const double a_term = sched.alpha_bar(terminal);
  plan.s = std::sqrt(a_term / sched.alpha_bar(plan.timesteps.front()));
  for (std::size_t j = 0; j < plan.timesteps.size(); ++j) {
    const double a_t = sched.alpha_bar(plan.timesteps[j]);
    const double a_prev = sched.alpha_bar(plan.prev_of(j));
    if (a_prev < a_t) fail(ErrorCode::InvalidTimestep, "schedule not decreasing along plan");
    // eps_j enters at step j and is carried to the terminal by the downstream scale factors.
    const double downstream = std::sqrt(a_term / a_prev);
    plan.e.push_back(downstream * ddim_coeffs(a_t, a_prev).eps_coeff);
  }
  return plan;
}

SamplerPlan make_plan(std::int64_t k, const NoiseSchedule& sched, Spacing spacing) {
  auto sel = select_timesteps(k, sched.steps(), spacing);
  return loopfree_coeffs(sel.timesteps, sel.terminal, sched);
}

void validate_plan(const SamplerPlan& plan, const NoiseSchedule& sched) {
  if (plan.k < 1 || static_cast<std::int64_t>(plan.timesteps.size()) != plan.k || static_cast<std::int64_t>(plan.e.size()) != plan.k)
    fail(ErrorCode::InvalidPlan, "plan arrays inconsistent with K=" + std::to_string(plan.k));
  try {
    const auto ref = loopfree_coeffs(plan.timesteps, plan.terminal, sched);
    if (ref.s != plan.s || ref.e != plan.e) fail(ErrorCode::InvalidPlan, "plan coefficients do not match the schedule");
  } catch (const Error& e) {
    if (e.code() == ErrorCode::InvalidPlan) throw;
    fail(ErrorCode::InvalidPlan, e.what());
  }
}

template <class T>
Tensor<T> combine_loopfree(const SamplerPlan& plan, const Tensor<T>& eps, std::span<const Tensor<T>> preds) {
  if (static_cast<std::int64_t>(preds.size()) != plan.k || plan.e.size() != preds.size())
    fail(ErrorCode::InvalidPlan, "expected " + std::to_string(plan.k) + " noise predictions, got " + std::to_string(preds.size()));
  for (const auto& p : preds) check_same_shape(eps, p, "combine_loopfree");
  Tensor<T> out(eps.shape());
  const T s = static_cast<T>(plan.s);
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = s * eps[i];
  for (std::size_t j = 0; j < preds.size(); ++j) {
    const T e = static_cast<T>(plan.e[j]);
    const T* p = preds[j].data();
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = out[i] + e * p[i];
  }
  return out;
}

template Tensor<float> ddim_step(const Tensor<float>&, const Tensor<float>&, std::int64_t, std::int64_t, const NoiseSchedule&);
template Tensor<double> ddim_step(const Tensor<double>&, const Tensor<double>&, std::int64_t, std::int64_t, const NoiseSchedule&);
template Tensor<float> combine_loopfree(const SamplerPlan&, const Tensor<float>&, std::span<const Tensor<float>>);
template Tensor<double> combine_loopfree(const SamplerPlan&, const Tensor<double>&, std::span<const Tensor<double>>);

}  // namespace tiue
