// SPDX-License-Identifier: Apache-2.0
#include "tiue/distill.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace tiue {

// ---------------------------------------------------------------- LoRA

template <class T>
Tensor<T> normal_from(const Shape& shape, CounterRng& rng) {
  Tensor<T> out(shape);
  for (auto& v : out.values()) v = static_cast<T>(rng.normal());
  return out;
}

namespace {

// Weight viewed as a matrix (out, in): linear (out, in) or 1x1 conv (out, in, 1, 1).
std::pair<std::int64_t, std::int64_t> matrix_dims(const Shape& s) { return {s[0], s[1]}; }

}  // namespace

template <class T>
LoRAParams<T> init_lora(const UNet<T>& net, const ParamStore<T>& base, int rank, double alpha, std::uint64_t seed,
                        std::vector<std::string> targets) {
  if (rank < 1) fail(ErrorCode::InvalidAttr, "lora rank must be >= 1");
  if (targets.empty()) targets = net.lora_targets(base);
  LoRAParams<T> out;
  out.rank = rank;
  out.alpha = alpha;
  CounterRng rng(seed, 0x6c6f7261ULL);
  const double a_std = 1.0 / std::sqrt(static_cast<double>(rank));
  for (const auto& name : targets) {
    if (!base.contains(name)) fail(ErrorCode::TargetMissing, "lora target '" + name + "' not in base parameters");
    const auto& w = base.get(name);
    const bool ok = w.rank() == 2 || (w.rank() == 4 && w.dim(2) == 1 && w.dim(3) == 1);
    if (!ok) fail(ErrorCode::InvalidAttr, "lora target '" + name + "' is not a linear or 1x1 conv weight");
    const auto [rows, cols] = matrix_dims(w.shape());
    Tensor<T> a(Shape{rank, cols});
    for (auto& v : a.values()) v = static_cast<T>(a_std * rng.normal());
    out.tensors.add(LoRAParams<T>::a_name(name), std::move(a));
    out.tensors.add(LoRAParams<T>::b_name(name), Tensor<T>(Shape{rows, rank}));
    out.targets.push_back(name);
  }
  return out;
}

template <class T>
LoRAParams<T> lora_from_tensors(const ParamStore<T>& tensors, int rank, double alpha) {
  LoRAParams<T> out;
  out.rank = rank;
  out.alpha = alpha;
  const std::string suffix = ".A";
  for (const auto& e : tensors.entries()) {
    if (e.name.rfind("lora.", 0) != 0 || e.name.size() < 7 || e.name.compare(e.name.size() - 2, 2, suffix) != 0) continue;
    const auto target = e.name.substr(5, e.name.size() - 7);
    const auto b = LoRAParams<T>::b_name(target);
    if (!tensors.contains(b)) fail(ErrorCode::CheckpointInvalid, "lora tensor '" + b + "' missing");
    if (e.value.rank() != 2 || e.value.dim(0) != rank) fail(ErrorCode::CheckpointInvalid, "lora tensor '" + e.name + "' has wrong rank");
    out.targets.push_back(target);
    out.tensors.add(e.name, e.value);
    out.tensors.add(b, tensors.get(b));
  }
  return out;
}

template <class T>
LoRABinding<T>::LoRABinding(const ParamStore<T>& base, const LoRAParams<T>& lora)
    : ParamBinding<T>(base), lora_(&lora), adapters_(lora.tensors) {
  for (std::size_t i = 0; i < lora.targets.size(); ++i) target_index_[lora.targets[i]] = i;
}

template <class T>
LoRABinding<T>::LoRABinding(const ParamStore<T>& base, const LoRAParams<T>& lora, Tape<T>& tape)
    : ParamBinding<T>(base), lora_(&lora), adapters_(lora.tensors, tape) {
  for (std::size_t i = 0; i < lora.targets.size(); ++i) target_index_[lora.targets[i]] = i;
}

template <class T>
Var<T> LoRABinding<T>::operator()(const std::string& name) const {
  auto w = ParamBinding<T>::operator()(name);
  if (target_index_.find(name) == target_index_.end()) return w;
  const auto a = adapters_(LoRAParams<T>::a_name(name));
  const auto b = adapters_(LoRAParams<T>::b_name(name));
  auto delta = ops::mul_scalar(ops::matmul(b, a), lora_->scale());
  return ops::add(w, ops::reshape(delta, w.shape()));
}

template <class T>
Tensor<T> lora_forward(const UNet<T>& net, const ParamStore<T>& base, const LoRAParams<T>& lora, const Tensor<T>& z,
                       std::span<const std::int64_t> t, const Tensor<T>& cond) {
  for (const auto& name : lora.targets)
    if (!base.contains(name)) fail(ErrorCode::TargetMissing, "lora target '" + name + "' not in base parameters");
  const LoRABinding<T> p(base, lora);
  return net.forward(p, Var<T>::view(z), t, cond).value();
}

// ---------------------------------------------------------------- guidance

template <class T>
Tensor<T> cfg_predict(const UNet<T>& net, const ParamBinding<T>& p, const Tensor<T>& x_t, std::span<const std::int64_t> t,
                      const Tensor<T>& cond, double scale) {
  if (!(scale >= 0.0)) fail(ErrorCode::InvalidAttr, "guidance scale must be >= 0");
  auto eps_c = net.forward(p, Var<T>::view(x_t), t, cond).value();
  if (scale == 1.0) return eps_c;
  const Tensor<T> null_cond(cond.shape());
  auto eps_u = net.forward(p, Var<T>::view(x_t), t, null_cond).value();
  if (scale == 0.0) return eps_u;
  const T s = static_cast<T>(scale);
  for (std::int64_t i = 0; i < eps_u.numel(); ++i) eps_u[i] = eps_u[i] + s * (eps_c[i] - eps_u[i]);
  return eps_u;
}

// ---------------------------------------------------------------- student

template <class T>
StudentPass<T> student_one_pass(const UNet<T>& net, const ParamBinding<T>& p, const Tensor<T>& noise, const SamplerPlan& plan,
                                const Tensor<T>& cond) {
  if (plan.k < 1 || plan.timesteps.size() != static_cast<std::size_t>(plan.k) || plan.e.size() != plan.timesteps.size())
    fail(ErrorCode::InvalidPlan, "student pass needs a plan with K >= 1 coefficients");
  const auto batch = noise.dim(0);
  const auto cache = net.encode(p, Var<T>::view(noise), UNet<T>::same_t(plan.timesteps.front(), batch), cond);
  StudentPass<T> out;
  // Same operation order as combine_loopfree so values match the sampler bit for bit.
  Var<T> z = ops::mul_scalar(Var<T>::view(noise), plan.s);
  for (std::size_t j = 0; j < plan.timesteps.size(); ++j) {
    auto eps = net.decode(p, cache, UNet<T>::same_t(plan.timesteps[j], batch));
    z = ops::add(z, ops::mul_scalar(eps, plan.e[j]));
    out.eps_list.push_back(std::move(eps));
  }
  out.z0 = std::move(z);
  return out;
}

// ---------------------------------------------------------------- losses

std::string to_string(WeightKind w) { return w == WeightKind::Sigma2 ? "sigma2" : "constant"; }

WeightKind weight_kind_from_string(const std::string& s) {
  if (s == "sigma2") return WeightKind::Sigma2;
  if (s == "constant") return WeightKind::Constant;
  fail(ErrorCode::ConfigInvalid, "unknown w_kind '" + s + "'");
}

double vsd_weight(WeightKind kind, double alpha_bar) { return kind == WeightKind::Sigma2 ? 1.0 - alpha_bar : 1.0; }

namespace {

std::pair<std::int64_t, std::int64_t> vsd_t_range(const NoiseSchedule& sched, double lo_frac, double hi_frac) {
  const auto steps = sched.steps();
  const auto lo = std::clamp<std::int64_t>(std::llround(lo_frac * static_cast<double>(steps)), 0, steps - 1);
  const auto hi = std::clamp<std::int64_t>(std::llround(hi_frac * static_cast<double>(steps)), lo, steps - 1);
  return {lo, hi};
}

template <class T>
Tensor<T> noised(const Tensor<T>& z0, const Tensor<T>& eps, const NoiseSchedule& sched, std::span<const std::int64_t> t) {
  Tensor<T> x(z0.shape());
  const auto per = z0.numel() / z0.dim(0);
  for (std::int64_t b = 0; b < z0.dim(0); ++b) {
    const double ab = sched.alpha_bar(t[static_cast<std::size_t>(b)]);
    const T sa = static_cast<T>(std::sqrt(ab)), sn = static_cast<T>(std::sqrt(1.0 - ab));
    for (std::int64_t i = b * per; i < (b + 1) * per; ++i) x[i] = sa * z0[i] + sn * eps[i];
  }
  return x;
}

}  // namespace

template <class T>
VsdResult<T> vsd_grad(const Tensor<T>& z0, const UNet<T>& net, const ParamStore<T>& teacher, const LoRAParams<T>& lora,
                      const NoiseSchedule& sched, const Tensor<T>& cond, CounterRng& rng, const VsdOptions& opts) {
  if (!z0.all_finite()) fail(ErrorCode::NonFinite, "vsd input z0 is not finite");
  if (!(opts.t_min_frac >= 0.0 && opts.t_min_frac < opts.t_max_frac && opts.t_max_frac <= 1.0))
    fail(ErrorCode::InvalidRange, "need 0 <= t_min_frac < t_max_frac <= 1");
  const auto [lo, hi] = vsd_t_range(sched, opts.t_min_frac, opts.t_max_frac);
  const auto batch = z0.dim(0);
  VsdResult<T> out;
  for (std::int64_t b = 0; b < batch; ++b) {
    out.t.push_back(rng.range(lo, hi + 1));
    out.weights.push_back(vsd_weight(opts.w_kind, sched.alpha_bar(out.t.back())));
  }
  const auto eps = normal_from<T>(z0.shape(), rng);
  const auto x = noised(z0, eps, sched, out.t);

  const ParamBinding<T> tp(teacher);
  const LoRABinding<T> lp(teacher, lora);
  const auto eps_teacher = cfg_predict(net, tp, x, out.t, cond, opts.guidance_scale);
  const auto eps_lora = cfg_predict(net, lp, x, out.t, cond, opts.guidance_scale);
  if (!eps_teacher.all_finite()) fail(ErrorCode::NonFinite, "teacher prediction is not finite");
  if (!eps_lora.all_finite()) fail(ErrorCode::NonFinite, "lora prediction is not finite");

  out.grad = Tensor<T>(z0.shape());
  const auto per = z0.numel() / batch;
  for (std::int64_t b = 0; b < batch; ++b) {
    const T w = static_cast<T>(out.weights[static_cast<std::size_t>(b)]);
    for (std::int64_t i = b * per; i < (b + 1) * per; ++i) out.grad[i] = w * (eps_teacher[i] - eps_lora[i]);
  }
  return out;
}

template <class T>
Var<T> vsd_surrogate(const Var<T>& z0, const Tensor<T>& grad) {
  check_same_shape(z0.value(), grad, "vsd_surrogate");
  return ops::sum(ops::mul(z0, Var<T>::constant(grad)));
}

template <class T>
KlResult<T> kl_loss(std::span<const Var<T>> eps_list) {
  if (eps_list.empty()) fail(ErrorCode::InvalidAttr, "kl_loss needs at least one prediction");
  KlResult<T> out;
  Var<T> total;
  for (const auto& eps : eps_list) {
    if (!eps.defined() || eps.numel() == 0) fail(ErrorCode::InvalidAttr, "kl_loss input is empty");
    const auto m = ops::row_mean(eps);
    const auto v_raw = ops::row_var(eps);
    for (auto x : v_raw.value().values())
      if (static_cast<double>(x) < kMinVariance) out.degenerate = true;
    const auto v = ops::clamp_min(v_raw, kMinVariance);
    // 0.5 * (m^2 + v - 1 - log v), averaged over the batch
    auto kl = ops::mul_scalar(ops::add_scalar(ops::sub(ops::add(ops::square(m), v), ops::log(v)), -1.0), 0.5);
    auto term = ops::mean(kl);
    total = total.defined() ? ops::add(total, term) : term;
  }
  out.loss = ops::mul_scalar(total, 1.0 / static_cast<double>(eps_list.size()));
  return out;
}

template <class T>
double lora_step(LoRAParams<T>& lora, const UNet<T>& net, const ParamStore<T>& base, const Tensor<T>& z0, const NoiseSchedule& sched,
                 const Tensor<T>& cond, CounterRng& rng, AdamState<T>& opt) {
  const auto batch = z0.dim(0);
  std::vector<std::int64_t> t;
  for (std::int64_t b = 0; b < batch; ++b) t.push_back(rng.below(sched.steps()));
  const auto eps = normal_from<T>(z0.shape(), rng);
  const auto x = noised(z0, eps, sched, t);

  Tape<T> tape;
  const LoRABinding<T> p(base, lora, tape);
  const auto pred = net.forward(p, Var<T>::view(x), t, cond);
  const auto loss = ops::mean(ops::square(ops::sub(pred, Var<T>::view(eps))));
  const double value = static_cast<double>(loss.value().item());
  if (!std::isfinite(value)) fail(ErrorCode::NonFinite, "lora loss is not finite");
  const auto grads = p.lora_gradients(tape.backward(loss));
  adam_step(lora.tensors, grads, opt);
  return value;
}

// ---------------------------------------------------------------- training loops

void TeacherConfig::validate() const {
  if (!(lr > 0.0)) fail(ErrorCode::ConfigInvalid, "teacher lr must be > 0");
  if (batch < 1) fail(ErrorCode::ConfigInvalid, "teacher batch must be >= 1");
  if (iterations < 0) fail(ErrorCode::ConfigInvalid, "teacher iterations must be >= 0");
  if (!(ema_decay >= 0.0 && ema_decay <= 1.0)) fail(ErrorCode::DecayOutOfRange, "ema_decay must lie in [0, 1]");
  if (!(cond_drop_prob >= 0.0 && cond_drop_prob <= 1.0)) fail(ErrorCode::ConfigInvalid, "cond_drop_prob must lie in [0, 1]");
}

void DistillConfig::validate() const {
  if (!(lr_student > 0.0) || !(lr_lora > 0.0)) fail(ErrorCode::ConfigInvalid, "learning rates must be > 0");
  if (!(guidance_scale >= 0.0)) fail(ErrorCode::ConfigInvalid, "guidance_scale must be >= 0");
  if (k < 1) fail(ErrorCode::ConfigInvalid, "k must be >= 1");
  if (!(kl_weight >= 0.0)) fail(ErrorCode::ConfigInvalid, "kl_weight must be >= 0");
  if (!(ema_decay >= 0.0 && ema_decay <= 1.0)) fail(ErrorCode::DecayOutOfRange, "ema_decay must lie in [0, 1]");
  if (!(t_min_frac >= 0.0 && t_min_frac < t_max_frac && t_max_frac <= 1.0))
    fail(ErrorCode::ConfigInvalid, "need 0 <= t_min_frac < t_max_frac <= 1");
  if (!(cond_drop_prob >= 0.0 && cond_drop_prob <= 1.0)) fail(ErrorCode::ConfigInvalid, "cond_drop_prob must lie in [0, 1]");
  if (batch < 1) fail(ErrorCode::ConfigInvalid, "batch must be >= 1");
  if (iterations < 0) fail(ErrorCode::ConfigInvalid, "iterations must be >= 0");
  if (lora_rank < 1) fail(ErrorCode::ConfigInvalid, "lora_rank must be >= 1");
}

template <class T>
TeacherResult<T> train_teacher(const UNet<T>& net, const NoiseSchedule& sched, const std::vector<ToySample>& dataset, const TeacherConfig& cfg,
                               const LogSink& log, const ParamStore<T>* init) {
  if (dataset.empty()) fail(ErrorCode::EmptyDataset, "teacher training needs a non-empty dataset");
  cfg.validate();
  TeacherResult<T> out;
  out.raw = init ? *init : net.init_params(cfg.seed);
  out.ema = out.raw;
  AdamState<T> opt(out.raw, AdamConfig{cfg.lr});
  CounterRng rng(cfg.seed, 0x7465616368ULL);
  const auto& mc = net.config();
  const auto n = static_cast<std::int64_t>(dataset.size());

  for (std::int64_t it = 0; it < cfg.iterations; ++it) {
    Tensor<T> x0(Shape{cfg.batch, mc.in_channels, mc.image_size, mc.image_size});
    Tensor<T> cond(Shape{cfg.batch, mc.cond_dim});
    const auto per = x0.numel() / cfg.batch;
    for (std::int64_t b = 0; b < cfg.batch; ++b) {
      const auto& s = dataset[static_cast<std::size_t>(rng.below(n))];
      if (s.image.numel() != per) fail(ErrorCode::ShapeMismatch, "dataset image does not match the model input");
      for (std::int64_t i = 0; i < per; ++i) x0[b * per + i] = static_cast<T>(s.image[i]);
      const bool drop = rng.uniform() < cfg.cond_drop_prob;
      if (!drop) {
        const auto c = cond_embed(s.shape_id, s.color_id);
        if (static_cast<int>(c.size()) != mc.cond_dim) fail(ErrorCode::DimMismatch, "condition width does not match the model");
        for (int j = 0; j < mc.cond_dim; ++j) cond[b * mc.cond_dim + j] = static_cast<T>(c[static_cast<std::size_t>(j)]);
      }
    }
    std::vector<std::int64_t> t;
    for (std::int64_t b = 0; b < cfg.batch; ++b) t.push_back(rng.below(sched.steps()));
    auto eps = normal_from<T>(x0.shape(), rng);
    const auto x = noised(x0, eps, sched, t);
    if (cfg.zero_noise) eps.fill(T(0));

    Tape<T> tape;
    const ParamBinding<T> p(out.raw, tape);
    const auto pred = net.forward(p, Var<T>::view(x), t, cond);
    const auto loss = ops::mean(ops::square(ops::sub(pred, Var<T>::view(eps))));
    const double value = static_cast<double>(loss.value().item());
    if (!std::isfinite(value)) fail(ErrorCode::NonFinite, "teacher loss is not finite at iteration " + std::to_string(it));
    const auto grads = p.gradients(tape.backward(loss));
    adam_step(out.raw, grads, opt);
    ema_update(out.ema, out.raw, cfg.ema_decay);
    out.losses.push_back(value);
    if (log && cfg.log_every > 0 && (it % cfg.log_every == 0 || it + 1 == cfg.iterations)) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "%lld,%.6g", static_cast<long long>(it), value);
      log(buf);
    }
  }
  return out;
}

std::string distill_log_header() { return "iteration,vsd_loss,kl_loss,lora_loss,eps_mean,eps_var"; }

std::string to_csv(const DistillLogRow& r) {
  char buf[192];
  std::snprintf(buf, sizeof buf, "%lld,%.6g,%.6g,%.6g,%.6g,%.6g", static_cast<long long>(r.iteration), r.vsd_loss, r.kl_loss, r.lora_loss,
                r.eps_mean, r.eps_var);
  return buf;
}

namespace {

template <class T>
void require_unchanged(std::uint64_t before, const ParamStore<T>& store, const char* what, std::int64_t it) {
  if (store.hash() != before)
    fail(ErrorCode::NonFinite, std::string(what) + " parameters changed outside their own step at iteration " + std::to_string(it));
}

}  // namespace

template <class T>
DistillResult<T> distill_loop(const UNet<T>& net, const NoiseSchedule& sched, const ParamStore<T>& teacher, const DistillConfig& cfg,
                              const std::vector<std::vector<double>>& prompts, const LogSink& log) {
  cfg.validate();
  if (prompts.empty()) fail(ErrorCode::EmptyDataset, "distillation needs at least one prompt");
  for (const auto& name : net.init_params(0).names())
    if (!teacher.contains(name)) fail(ErrorCode::CheckpointInvalid, "teacher is missing parameter '" + name + "'");
  const auto& mc = net.config();
  for (const auto& c : prompts)
    if (static_cast<int>(c.size()) != mc.cond_dim) fail(ErrorCode::DimMismatch, "prompt width does not match the model");

  DistillResult<T> out;
  out.student_raw = teacher;
  out.student_ema = teacher;
  out.lora = init_lora(net, teacher, cfg.lora_rank, cfg.lora_alpha, cfg.seed);
  out.plan = make_plan(cfg.k, sched, cfg.spacing);
  AdamState<T> student_opt(out.student_raw, AdamConfig{cfg.lr_student});
  AdamState<T> lora_opt(out.lora.tensors, AdamConfig{cfg.lr_lora});
  CounterRng rng(cfg.seed, 0x64697374ULL);
  const VsdOptions vopts{cfg.w_kind, cfg.guidance_scale, cfg.t_min_frac, cfg.t_max_frac};
  const Shape zshape{cfg.batch, mc.in_channels, mc.image_size, mc.image_size};
  const auto teacher_hash = cfg.check_isolation ? teacher.hash() : 0;

  for (std::int64_t it = 0; it < cfg.iterations; ++it) {
    std::vector<std::vector<double>> rows;
    for (std::int64_t b = 0; b < cfg.batch; ++b) rows.push_back(prompts[static_cast<std::size_t>(rng.below(static_cast<std::int64_t>(prompts.size())))]);
    const auto cond = stack_conds<T>(rows);
    const auto noise = normal_from<T>(zshape, rng);

    // Student step: VSD surrogate + weighted KL.
    const auto lora_hash = cfg.check_isolation ? out.lora.tensors.hash() : 0;
    Tape<T> tape;
    const ParamBinding<T> sp(out.student_raw, tape);
    const auto pass = student_one_pass(net, sp, noise, out.plan, cond);
    const auto vsd = vsd_grad(pass.z0.value(), net, teacher, out.lora, sched, cond, rng, vopts);
    const auto surrogate = vsd_surrogate(pass.z0, vsd.grad);
    const auto kl = kl_loss<T>(pass.eps_list);
    const auto total = cfg.kl_weight > 0.0 ? ops::add(surrogate, ops::mul_scalar(kl.loss, cfg.kl_weight)) : surrogate;
    const double total_value = static_cast<double>(total.value().item());
    if (!std::isfinite(total_value)) fail(ErrorCode::NonFinite, "student loss is not finite at iteration " + std::to_string(it));
    const auto grads = sp.gradients(tape.backward(total));
    adam_step(out.student_raw, grads, student_opt);
    ema_update(out.student_ema, out.student_raw, cfg.ema_decay);

    double eps_mean = 0.0, eps_sq = 0.0, count = 0.0;
    for (const auto& e : pass.eps_list)
      for (auto v : e.value().values()) {
        eps_mean += static_cast<double>(v);
        eps_sq += static_cast<double>(v) * static_cast<double>(v);
        count += 1.0;
      }
    eps_mean /= count;
    const double eps_var = eps_sq / count - eps_mean * eps_mean;

    if (cfg.check_isolation) {
      require_unchanged(teacher_hash, teacher, "teacher", it);
      require_unchanged(lora_hash, out.lora.tensors, "lora", it);
    }

    // Adapter step on the detached student output.
    const auto student_hash = cfg.check_isolation ? out.student_raw.hash() : 0;
    const auto ema_hash = cfg.check_isolation ? out.student_ema.hash() : 0;
    const double lora_loss = lora_step(out.lora, net, teacher, pass.z0.value(), sched, cond, rng, lora_opt);
    if (cfg.check_isolation) {
      require_unchanged(teacher_hash, teacher, "teacher", it);
      require_unchanged(student_hash, out.student_raw, "student", it);
      require_unchanged(ema_hash, out.student_ema, "student ema", it);
    }

    DistillLogRow row{it, static_cast<double>(surrogate.value().item()), static_cast<double>(kl.loss.value().item()), lora_loss, eps_mean,
                      eps_var};
    out.log.push_back(row);
    if (log && cfg.log_every > 0 && (it % cfg.log_every == 0 || it + 1 == cfg.iterations)) log(to_csv(row));
  }
  return out;
}

#define TIUE_INSTANTIATE_DISTILL(T)                                                                                                      \
  template Tensor<T> normal_from<T>(const Shape&, CounterRng&);                                                                          \
  template LoRAParams<T> init_lora(const UNet<T>&, const ParamStore<T>&, int, double, std::uint64_t, std::vector<std::string>);          \
  template LoRAParams<T> lora_from_tensors(const ParamStore<T>&, int, double);                                                           \
  template class LoRABinding<T>;                                                                                                         \
  template Tensor<T> lora_forward(const UNet<T>&, const ParamStore<T>&, const LoRAParams<T>&, const Tensor<T>&,                          \
                                  std::span<const std::int64_t>, const Tensor<T>&);                                                      \
  template Tensor<T> cfg_predict(const UNet<T>&, const ParamBinding<T>&, const Tensor<T>&, std::span<const std::int64_t>,                \
                                 const Tensor<T>&, double);                                                                              \
  template StudentPass<T> student_one_pass(const UNet<T>&, const ParamBinding<T>&, const Tensor<T>&, const SamplerPlan&,                 \
                                           const Tensor<T>&);                                                                            \
  template VsdResult<T> vsd_grad(const Tensor<T>&, const UNet<T>&, const ParamStore<T>&, const LoRAParams<T>&, const NoiseSchedule&,     \
                                 const Tensor<T>&, CounterRng&, const VsdOptions&);                                                      \
  template Var<T> vsd_surrogate(const Var<T>&, const Tensor<T>&);                                                                        \
  template KlResult<T> kl_loss(std::span<const Var<T>>);                                                                                 \
  template double lora_step(LoRAParams<T>&, const UNet<T>&, const ParamStore<T>&, const Tensor<T>&, const NoiseSchedule&,                \
                            const Tensor<T>&, CounterRng&, AdamState<T>&);                                                               \
  template TeacherResult<T> train_teacher(const UNet<T>&, const NoiseSchedule&, const std::vector<ToySample>&, const TeacherConfig&,    \
                                          const LogSink&, const ParamStore<T>*);                                                         \
  template DistillResult<T> distill_loop(const UNet<T>&, const NoiseSchedule&, const ParamStore<T>&, const DistillConfig&,              \
                                         const std::vector<std::vector<double>>&, const LogSink&);

TIUE_INSTANTIATE_DISTILL(float)
TIUE_INSTANTIATE_DISTILL(double)

}  // namespace tiue
