// SPDX-License-Identifier: Apache-2.0
#include "tiue/sampler.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include "tiue/random.hpp"

namespace tiue {

std::string to_string(SampleMode m) {
  switch (m) {
    case SampleMode::Ddim: return "ddim";
    case SampleMode::LoopfreeSeq: return "loopfree-seq";
    case SampleMode::LoopfreePar: return "loopfree-par";
  }
  return "ddim";
}

SampleMode sample_mode_from_string(const std::string& s) {
  if (s == "ddim") return SampleMode::Ddim;
  if (s == "loopfree-seq" || s == "loopfree_seq") return SampleMode::LoopfreeSeq;
  if (s == "loopfree-par" || s == "loopfree_par") return SampleMode::LoopfreePar;
  fail(ErrorCode::InvalidAttr, "unknown sample mode '" + s + "'");
}

std::uint8_t to_pixel(double z) {
  const double c = std::clamp(z, -1.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(255.0 * (c + 1.0) / 2.0));
}

template <class T>
Tensor<T> clamp_unit(Tensor<T> z) {
  for (auto& v : z.values()) v = std::clamp(v, T(-1), T(1));
  return z;
}

template <class T>
Tensor<T> initial_noise(const UNetConfig& cfg, std::int64_t batch, std::uint64_t seed, std::uint64_t first_index) {
  return normal_tensor<T>(Shape{batch, cfg.in_channels, cfg.image_size, cfg.image_size}, NoiseKey{seed, 0}, first_index);
}

namespace {

template <class T>
Tensor<T> guided_eps(const DiffusionModel<T>& model, const Tensor<T>& z, std::int64_t t, const Tensor<T>& cond, double scale) {
  const ParamBinding<T> p(model.params);
  const auto ts = UNet<T>::same_t(t, z.dim(0));
  auto eps_c = model.net.forward(p, Var<T>::view(z), ts, cond).value();
  if (scale == 1.0) return eps_c;
  const Tensor<T> null_cond(cond.shape());
  auto eps_u = model.net.forward(p, Var<T>::view(z), ts, null_cond).value();
  if (scale == 0.0) return eps_u;
  const T s = static_cast<T>(scale);
  for (std::int64_t i = 0; i < eps_u.numel(); ++i) eps_u[i] = eps_u[i] + s * (eps_c[i] - eps_u[i]);
  return eps_u;
}

template <class T>
void check_request(const DiffusionModel<T>& model, const SampleRequest<T>& req) {
  if (req.batch() < 1) fail(ErrorCode::ShapeMismatch, "sample request needs at least one condition row");
  if (req.cond.rank() != 2 || req.cond.dim(1) != model.net.config().cond_dim)
    fail(ErrorCode::ShapeMismatch, "conditions must be (batch, cond_dim)");
  if (req.thread_count < 1) fail(ErrorCode::InvalidAttr, "thread_count must be >= 1");
  if (!(req.guidance_scale >= 0.0)) fail(ErrorCode::InvalidAttr, "guidance_scale must be >= 0");
}

}  // namespace

template <class T>
Tensor<T> sample_ddim(const DiffusionModel<T>& model, const SampleRequest<T>& req) {
  check_request(model, req);
  if (req.steps < 1 || req.steps > model.schedule.steps())
    fail(ErrorCode::InvalidSteps, "steps must lie in [1, " + std::to_string(model.schedule.steps()) + "]");
  const auto sel = select_timesteps(req.steps, model.schedule.steps(), req.spacing);
  auto z = initial_noise<T>(model.net.config(), req.batch(), req.seed, req.first_index);
  for (std::size_t j = 0; j < sel.timesteps.size(); ++j) {
    const auto t = sel.timesteps[j];
    const auto t_prev = j + 1 < sel.timesteps.size() ? sel.timesteps[j + 1] : sel.terminal;
    const auto eps = guided_eps(model, z, t, req.cond, req.guidance_scale);
    z = ddim_step(z, eps, t, t_prev, model.schedule);
  }
  return clamp_unit(std::move(z));
}

template <class T>
std::vector<Tensor<T>> loopfree_predictions(const DiffusionModel<T>& model, const SamplerPlan& plan, const Tensor<T>& noise,
                                            const Tensor<T>& cond, bool parallel, int thread_count) {
  const ParamBinding<T> p(model.params);
  const auto batch = noise.dim(0);
  const EncoderCache<T> cache = model.net.encode(p, Var<T>::view(noise), UNet<T>::same_t(plan.timesteps.front(), batch), cond);
  const auto k = static_cast<std::size_t>(plan.k);
  std::vector<Tensor<T>> preds(k);
  auto run = [&](std::size_t j) { preds[j] = model.net.decode(p, cache, UNet<T>::same_t(plan.timesteps[j], batch)).value(); };

  if (!parallel || thread_count <= 1 || k == 1) {
    for (std::size_t j = 0; j < k; ++j) run(j);
    return preds;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(thread_count), k);
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t j = next.fetch_add(1); j < k; j = next.fetch_add(1)) {
          try {
            run(j);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!error) error = std::current_exception();
          }
        }
      });
  }
  if (error) std::rethrow_exception(error);
  return preds;
}

template <class T>
Tensor<T> sample_loopfree(const DiffusionModel<T>& model, const SampleRequest<T>& req) {
  check_request(model, req);
  if (!req.plan) fail(ErrorCode::InvalidPlan, "loop-free sampling requires a plan");
  validate_plan(*req.plan, model.schedule);
  if (req.guidance_scale != 1.0) fail(ErrorCode::InvalidPlan, "loop-free sampling does not apply guidance");
  const auto noise = initial_noise<T>(model.net.config(), req.batch(), req.seed, req.first_index);
  const auto preds = loopfree_predictions(model, *req.plan, noise, req.cond, req.mode == SampleMode::LoopfreePar, req.thread_count);
  return clamp_unit(combine_loopfree<T>(*req.plan, noise, preds));
}

template <class T>
Tensor<T> sample(const DiffusionModel<T>& model, const SampleRequest<T>& req) {
  return req.mode == SampleMode::Ddim ? sample_ddim(model, req) : sample_loopfree(model, req);
}

template <class T>
Tensor<T> sample_many(const DiffusionModel<T>& model, SampleRequest<T> req, const std::vector<std::vector<double>>& conds, std::int64_t chunk) {
  if (conds.empty()) fail(ErrorCode::ShapeMismatch, "no conditions to sample");
  if (chunk < 1) fail(ErrorCode::InvalidAttr, "chunk must be >= 1");
  const auto& cfg = model.net.config();
  const auto n = static_cast<std::int64_t>(conds.size());
  Tensor<T> out(Shape{n, cfg.out_channels, cfg.image_size, cfg.image_size});
  const auto per = out.numel() / n;
  const auto base = req.first_index;
  for (std::int64_t start = 0; start < n; start += chunk) {
    const auto count = std::min(chunk, n - start);
    std::vector<std::vector<double>> rows(conds.begin() + start, conds.begin() + start + count);
    Tensor<T> cond(Shape{count, cfg.cond_dim});
    for (std::int64_t b = 0; b < count; ++b) {
      if (static_cast<int>(rows[static_cast<std::size_t>(b)].size()) != cfg.cond_dim) fail(ErrorCode::DimMismatch, "condition width does not match the model");
      for (int j = 0; j < cfg.cond_dim; ++j) cond[b * cfg.cond_dim + j] = static_cast<T>(rows[static_cast<std::size_t>(b)][static_cast<std::size_t>(j)]);
    }
    req.cond = std::move(cond);
    req.first_index = base + static_cast<std::uint64_t>(start);
    const auto z = sample(model, req);
    std::copy_n(z.data(), count * per, out.data() + start * per);
  }
  return out;
}

std::vector<std::vector<double>> interpolate_conditions(const std::vector<double>& c1, const std::vector<double>& c2, int n) {
  if (c1.size() != c2.size()) fail(ErrorCode::DimMismatch, "condition vectors differ in dimension");
  if (n < 2) fail(ErrorCode::InvalidAttr, "interpolation needs n >= 2");
  double dot = 0.0, n1 = 0.0, n2 = 0.0;
  for (std::size_t i = 0; i < c1.size(); ++i) {
    dot += c1[i] * c2[i];
    n1 += c1[i] * c1[i];
    n2 += c2[i] * c2[i];
  }
  n1 = std::sqrt(n1);
  n2 = std::sqrt(n2);
  double theta = 0.0;
  bool linear = n1 == 0.0 || n2 == 0.0;
  if (!linear) {
    theta = std::acos(std::clamp(dot / (n1 * n2), -1.0, 1.0));
    linear = std::sin(theta) < 1e-8;
  }
  std::vector<std::vector<double>> out(static_cast<std::size_t>(n), std::vector<double>(c1.size()));
  for (int s = 0; s < n; ++s) {
    const double u = static_cast<double>(s) / static_cast<double>(n - 1);
    double w1 = 1.0 - u, w2 = u;
    if (!linear) {
      w1 = std::sin((1.0 - u) * theta) / std::sin(theta);
      w2 = std::sin(u * theta) / std::sin(theta);
    }
    for (std::size_t i = 0; i < c1.size(); ++i) out[static_cast<std::size_t>(s)][i] = w1 * c1[i] + w2 * c2[i];
  }
  out.front() = c1;
  out.back() = c2;
  return out;
}

#define TIUE_INSTANTIATE_SAMPLER(T)                                                                                     \
  template Tensor<T> clamp_unit(Tensor<T>);                                                                             \
  template Tensor<T> initial_noise<T>(const UNetConfig&, std::int64_t, std::uint64_t, std::uint64_t);                   \
  template Tensor<T> sample_ddim(const DiffusionModel<T>&, const SampleRequest<T>&);                                    \
  template std::vector<Tensor<T>> loopfree_predictions(const DiffusionModel<T>&, const SamplerPlan&, const Tensor<T>&,  \
                                                       const Tensor<T>&, bool, int);                                    \
  template Tensor<T> sample_loopfree(const DiffusionModel<T>&, const SampleRequest<T>&);                                \
  template Tensor<T> sample(const DiffusionModel<T>&, const SampleRequest<T>&);                                         \
  template Tensor<T> sample_many(const DiffusionModel<T>&, SampleRequest<T>, const std::vector<std::vector<double>>&, std::int64_t);

TIUE_INSTANTIATE_SAMPLER(float)
TIUE_INSTANTIATE_SAMPLER(double)

}  // namespace tiue
