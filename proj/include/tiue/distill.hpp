// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tiue/data.hpp"
#include "tiue/optim.hpp"
#include "tiue/random.hpp"
#include "tiue/sampler.hpp"

namespace tiue {

// ---------------------------------------------------------------- LoRA

/// Low-rank adapters: for each target weight W, delta = (alpha / rank) * B * A
/// with A (rank, in) and B (out, rank). Tensors are named lora.<target>.A / .B.
template <class T>
struct LoRAParams {
  int rank = 64;
  double alpha = 108.0;
  std::vector<std::string> targets;
  ParamStore<T> tensors;

  double scale() const { return alpha / static_cast<double>(rank); }
  static std::string a_name(const std::string& target) { return "lora." + target + ".A"; }
  static std::string b_name(const std::string& target) { return "lora." + target + ".B"; }
};

/// A ~ N(0, 1/rank), B = 0. Empty `targets` selects every linear and 1x1-conv weight.
template <class T>
LoRAParams<T> init_lora(const UNet<T>& net, const ParamStore<T>& base, int rank, double alpha, std::uint64_t seed,
                        std::vector<std::string> targets = {});

/// Rebuild LoRAParams from stored lora.* tensors.
template <class T>
LoRAParams<T> lora_from_tensors(const ParamStore<T>& tensors, int rank, double alpha);

/// Frozen base weights with adapters applied to targeted names. With a tape,
/// only the adapter tensors become leaves.
template <class T>
class LoRABinding : public ParamBinding<T> {
 public:
  LoRABinding(const ParamStore<T>& base, const LoRAParams<T>& lora);
  LoRABinding(const ParamStore<T>& base, const LoRAParams<T>& lora, Tape<T>& tape);

  Var<T> operator()(const std::string& name) const override;
  /// Gradients aligned with lora.tensors.entries().
  std::vector<Tensor<T>> lora_gradients(const Gradients<T>& g) const { return adapters_.gradients(g); }

 private:
  const LoRAParams<T>* lora_;
  ParamBinding<T> adapters_;
  std::map<std::string, std::size_t> target_index_;
};

template <class T>
Tensor<T> lora_forward(const UNet<T>& net, const ParamStore<T>& base, const LoRAParams<T>& lora, const Tensor<T>& z,
                       std::span<const std::int64_t> t, const Tensor<T>& cond);

// ---------------------------------------------------------------- guidance

/// eps_u + scale * (eps_c - eps_u); scale 1 returns eps_c and scale 0 returns eps_u exactly.
template <class T>
Tensor<T> cfg_predict(const UNet<T>& net, const ParamBinding<T>& p, const Tensor<T>& x_t, std::span<const std::int64_t> t,
                      const Tensor<T>& cond, double scale);

// ---------------------------------------------------------------- student

template <class T>
struct StudentPass {
  Var<T> z0;
  std::vector<Var<T>> eps_list;  // plan order: t = K .. 1
};

/// Encode the noise once at the key step, decode at every plan step, combine in closed form.
template <class T>
StudentPass<T> student_one_pass(const UNet<T>& net, const ParamBinding<T>& p, const Tensor<T>& noise, const SamplerPlan& plan,
                                const Tensor<T>& cond);

// ---------------------------------------------------------------- losses

enum class WeightKind { Sigma2, Constant };
std::string to_string(WeightKind w);
WeightKind weight_kind_from_string(const std::string& s);

/// w(t): 1 - alpha_bar(t) for Sigma2, 1 for Constant.
double vsd_weight(WeightKind kind, double alpha_bar);

template <class T>
struct VsdResult {
  Tensor<T> grad;  // w(t) * (eps_teacher - eps_lora), same shape as z0
  std::vector<std::int64_t> t;
  std::vector<double> weights;
};

struct VsdOptions {
  WeightKind w_kind = WeightKind::Sigma2;
  double guidance_scale = 4.5;
  double t_min_frac = 0.02;
  double t_max_frac = 0.98;
};

/// Score-distillation gradient on z0. No gradient tracking; throws NonFinite on bad predictions.
template <class T>
VsdResult<T> vsd_grad(const Tensor<T>& z0, const UNet<T>& net, const ParamStore<T>& teacher, const LoRAParams<T>& lora,
                      const NoiseSchedule& sched, const Tensor<T>& cond, CounterRng& rng, const VsdOptions& opts);

/// sum(stop_grad(grad) * z0): its gradient w.r.t. z0 is exactly `grad`.
template <class T>
Var<T> vsd_surrogate(const Var<T>& z0, const Tensor<T>& grad);

template <class T>
struct KlResult {
  Var<T> loss;
  bool degenerate = false;
};

inline constexpr double kMinVariance = 1e-12;

/// Moment-matched KL(N(mean, var) || N(0, 1)) per batch item and prediction, averaged.
template <class T>
KlResult<T> kl_loss(std::span<const Var<T>> eps_list);

/// One Adam step of the adapter on the denoising MSE at a fresh (t, eps). Returns the loss.
template <class T>
double lora_step(LoRAParams<T>& lora, const UNet<T>& net, const ParamStore<T>& base, const Tensor<T>& z0, const NoiseSchedule& sched,
                 const Tensor<T>& cond, CounterRng& rng, AdamState<T>& opt);

// ---------------------------------------------------------------- training loops

struct TeacherConfig {
  double lr = 1e-3;
  std::int64_t batch = 32;
  std::int64_t iterations = 2000;
  double ema_decay = 0.999;
  double cond_drop_prob = 0.1;
  std::uint64_t seed = 0;
  std::int64_t log_every = 100;
  /// Test hook: train against a zero noise target.
  bool zero_noise = false;

  void validate() const;
};

template <class T>
struct TeacherResult {
  ParamStore<T> raw;
  ParamStore<T> ema;
  std::vector<double> losses;
};

using LogSink = std::function<void(const std::string& line)>;

template <class T>
TeacherResult<T> train_teacher(const UNet<T>& net, const NoiseSchedule& sched, const std::vector<ToySample>& dataset, const TeacherConfig& cfg,
                               const LogSink& log = {}, const ParamStore<T>* init = nullptr);

struct DistillConfig {
  double lr_student = 1e-6;
  double lr_lora = 1e-3;
  double guidance_scale = 4.5;
  std::int64_t k = 4;
  double kl_weight = 0.1;
  WeightKind w_kind = WeightKind::Sigma2;
  double ema_decay = 0.999;
  double t_min_frac = 0.02;
  double t_max_frac = 0.98;
  double cond_drop_prob = 0.1;
  std::int64_t batch = 4;
  std::int64_t iterations = 1000;
  std::uint64_t seed = 0;
  int lora_rank = 64;
  double lora_alpha = 108.0;
  Spacing spacing = Spacing::Trailing;
  std::int64_t log_every = 50;
  /// Test mode: verify every iteration that each step only touches its own parameters.
  bool check_isolation = false;

  void validate() const;
};

struct DistillLogRow {
  std::int64_t iteration;
  double vsd_loss;
  double kl_loss;
  double lora_loss;
  double eps_mean;
  double eps_var;
};

std::string distill_log_header();
std::string to_csv(const DistillLogRow& row);

template <class T>
struct DistillResult {
  ParamStore<T> student_raw;
  ParamStore<T> student_ema;
  LoRAParams<T> lora;
  SamplerPlan plan;
  std::vector<DistillLogRow> log;
};

/// Alternating student (VSD + KL) and adapter (denoising MSE) updates from conditions only.
template <class T>
DistillResult<T> distill_loop(const UNet<T>& net, const NoiseSchedule& sched, const ParamStore<T>& teacher, const DistillConfig& cfg,
                              const std::vector<std::vector<double>>& prompts, const LogSink& log = {});

/// Standard-normal tensor drawn sequentially from `rng`.
template <class T>
Tensor<T> normal_from(const Shape& shape, CounterRng& rng);

}  // namespace tiue
