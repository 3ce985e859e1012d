// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "support.hpp"
#include "tiue/data.hpp"
#include "tiue/distill.hpp"
#include "tiue/random.hpp"

using namespace tiue;
using namespace tiue::testing;

namespace {

struct Fixture {
  UNet<float> net{tiny_config()};
  ParamStore<float> base = net.init_params(3);
  NoiseSchedule sched = build_schedule(ScheduleParams{});
};

Tensor<float> rows(std::initializer_list<std::initializer_list<float>> r) {
  std::vector<float> v;
  std::int64_t n = 0, w = 0;
  for (const auto& row : r) {
    v.insert(v.end(), row.begin(), row.end());
    w = static_cast<std::int64_t>(row.size());
    ++n;
  }
  return Tensor<float>(Shape{n, w}, std::move(v));
}

ToySpec tiny_data_spec() {
  ToySpec s;
  s.image_size = 8;
  s.position_jitter = 0.5;
  s.size_min = 1.5;
  s.size_max = 2.5;
  return s;
}

DistillConfig tiny_distill(std::int64_t iterations) {
  DistillConfig c;
  c.iterations = iterations;
  c.batch = 2;
  c.k = 2;
  c.lr_student = 1e-4;
  c.lora_rank = 4;
  c.lora_alpha = 8.0;
  c.seed = 11;
  c.log_every = 1;
  return c;
}

}  // namespace

TEST_CASE("fresh adapter leaves the forward pass bit-identical") {
  Fixture f;
  const auto lora = init_lora(f.net, f.base, 4, 108.0, 1);
  CHECK(lora.targets == f.net.lora_targets(f.base));
  CHECK(lora.tensors.size() == 2 * lora.targets.size());
  for (const auto& target : lora.targets) {
    const auto& w = f.base.get(target).shape();
    CHECK(lora.tensors.get(LoRAParams<float>::a_name(target)).shape() == Shape{4, w[1]});
    CHECK(lora.tensors.get(LoRAParams<float>::b_name(target)).shape() == Shape{w[0], 4});
  }
  const auto z = random_tensor<float>(Shape{2, 3, 8, 8}, 4);
  const auto cond = random_tensor<float>(Shape{2, 16}, 5);
  const auto t = UNet<float>::same_t(321, 2);
  const ParamBinding<float> p(f.base);
  CHECK(lora_forward(f.net, f.base, lora, z, t, cond).bit_equal(f.net.forward(p, Var<float>::view(z), t, cond).value()));
}

TEST_CASE("adapter initial statistics") {
  Fixture f;
  const int rank = 16;
  const auto lora = init_lora(f.net, f.base, rank, 108.0, 2);
  double sum = 0.0, sq = 0.0, n = 0.0;
  for (const auto& target : lora.targets) {
    for (auto v : lora.tensors.get(LoRAParams<float>::a_name(target)).values()) {
      sum += v;
      sq += static_cast<double>(v) * v;
      n += 1.0;
    }
    for (auto v : lora.tensors.get(LoRAParams<float>::b_name(target)).values()) CHECK(v == 0.0f);
  }
  const double var = sq / n - (sum / n) * (sum / n);
  CHECK(var == doctest::Approx(1.0 / rank).epsilon(0.15));
  CHECK(lora.scale() == doctest::Approx(108.0 / 16.0));
}

TEST_CASE("single-weight perturbation matches editing the base") {
  Fixture f;
  const std::string target = "cond.proj.weight";
  const auto& w = f.base.get(target);
  const std::int64_t out = w.dim(0), in = w.dim(1), o = 3, i = 5;
  const double alpha = 1.7;
  const float b = 0.37f;
  auto lora = init_lora(f.net, f.base, 1, alpha, 3, {target});
  auto& A = lora.tensors.get(LoRAParams<float>::a_name(target));
  auto& B = lora.tensors.get(LoRAParams<float>::b_name(target));
  CHECK(A.shape() == Shape{1, in});
  CHECK(B.shape() == Shape{out, 1});
  for (auto& v : A.values()) v = 0.0f;
  A[i] = 1.0f;
  B[o] = b;

  auto edited = f.base;
  edited.get(target)[o * in + i] += static_cast<float>(alpha) * b;
  const auto z = random_tensor<float>(Shape{2, 3, 8, 8}, 6);
  const auto cond = random_tensor<float>(Shape{2, 16}, 7);
  const auto t = UNet<float>::same_t(100, 2);
  const ParamBinding<float> p(edited);
  const auto want = f.net.forward(p, Var<float>::view(z), t, cond).value();
  const auto got = lora_forward(f.net, f.base, lora, z, t, cond);
  CHECK(got.bit_equal(want));
}

TEST_CASE("adapter errors and frozen base") {
  Fixture f;
  try {
    init_lora(f.net, f.base, 4, 8.0, 1, {"no.such.weight"});
    FAIL("expected TargetMissing");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::TargetMissing);
  }

  auto lora = init_lora(f.net, f.base, 4, 8.0, 1);
  Tape<float> tape;
  const LoRABinding<float> p(f.base, lora, tape);
  CHECK(!p("enc.conv_in.weight").requires_grad());
  CHECK(!p("cond.proj.bias").requires_grad());
  CHECK(p("cond.proj.weight").requires_grad());
  const auto z = random_tensor<float>(Shape{1, 3, 8, 8}, 8);
  const auto cond = random_tensor<float>(Shape{1, 16}, 9);
  const auto loss = ops::mean(ops::square(f.net.forward(p, Var<float>::view(z), UNet<float>::same_t(500, 1), cond)));
  const auto grads = p.lora_gradients(tape.backward(loss));
  CHECK(grads.size() == lora.tensors.size());
  double b_norm = 0.0, a_norm = 0.0;
  for (std::size_t j = 0; j < grads.size(); ++j) {
    const bool is_b = lora.tensors.entries()[j].name.ends_with(".B");
    for (auto v : grads[j].values()) (is_b ? b_norm : a_norm) += std::abs(v);
  }
  CHECK(b_norm > 0.0);
  CHECK(a_norm == 0.0);  // B = 0 blocks the path to A
}

TEST_CASE("classifier-free guidance extremes") {
  Fixture f;
  const ParamBinding<float> p(f.base);
  const auto x = random_tensor<float>(Shape{2, 3, 8, 8}, 10);
  const auto cond = random_tensor<float>(Shape{2, 16}, 11);
  const Tensor<float> null_cond(Shape{2, 16});
  const auto t = UNet<float>::same_t(600, 2);
  const auto eps_c = f.net.forward(p, Var<float>::view(x), t, cond).value();
  const auto eps_u = f.net.forward(p, Var<float>::view(x), t, null_cond).value();
  CHECK(cfg_predict(f.net, p, x, t, cond, 1.0).bit_equal(eps_c));
  CHECK(cfg_predict(f.net, p, x, t, cond, 0.0).bit_equal(eps_u));
  for (double s : {0.0, 0.5, 4.5, 10.0}) CHECK(cfg_predict(f.net, p, x, t, null_cond, s).bit_equal(eps_u));
  const auto g = cfg_predict(f.net, p, x, t, cond, 4.5);
  for (std::int64_t i = 0; i < g.numel(); ++i)
    CHECK(g[i] == doctest::Approx(eps_u[i] + 4.5 * (eps_c[i] - eps_u[i])).epsilon(1e-5).scale(1.0));
  CHECK_THROWS_AS(cfg_predict(f.net, p, x, t, cond, -0.5), Error);
}

TEST_CASE("student pass structure") {
  Fixture f;
  const ParamBinding<float> p(f.base);
  const auto noise = random_tensor<float>(Shape{2, 3, 8, 8}, 12);
  const auto cond = random_tensor<float>(Shape{2, 16}, 13);

  SUBCASE("K predictions of image shape") {
    const auto plan = make_plan(4, f.sched);
    const auto pass = student_one_pass(f.net, p, noise, plan, cond);
    CHECK(pass.eps_list.size() == 4);
    for (const auto& e : pass.eps_list) CHECK(e.shape() == noise.shape());
    CHECK(pass.z0.shape() == noise.shape());
    std::vector<Tensor<float>> preds;
    for (const auto& e : pass.eps_list) preds.push_back(e.value());
    CHECK(pass.z0.value().bit_equal(combine_loopfree<float>(plan, noise, preds)));
  }
  SUBCASE("K=1 is one ddim step") {
    const auto plan = make_plan(1, f.sched);
    const auto pass = student_one_pass(f.net, p, noise, plan, cond);
    CHECK(pass.z0.value().bit_equal(ddim_step(noise, pass.eps_list[0].value(), plan.timesteps[0], kTerminal, f.sched)));
  }
  SUBCASE("bad plan") {
    auto plan = make_plan(2, f.sched);
    plan.e.pop_back();
    try {
      student_one_pass(f.net, p, noise, plan, cond);
      FAIL("expected InvalidPlan");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::InvalidPlan);
    }
  }
}

TEST_CASE("student pass gradient matches finite differences in float64") {
  for (std::int64_t k : {1L, 3L}) {
    const auto r = student_graph_check<double>(40 + static_cast<std::uint64_t>(k), k, 3, 16);
    INFO("K=", k, " worst ", r.worst_input, " ", r.max_rel_err);
    CHECK(r.max_rel_err < 1e-5);
  }
}

TEST_CASE("score distillation gradient") {
  Fixture f;
  const auto z0 = random_tensor<float>(Shape{3, 3, 8, 8}, 14);
  const auto cond = random_tensor<float>(Shape{3, 16}, 15);

  SUBCASE("zero-delta adapter gives a zero gradient") {
    const auto lora = init_lora(f.net, f.base, 4, 108.0, 1);
    CounterRng rng(1, 0);
    const auto r = vsd_grad(z0, f.net, f.base, lora, f.sched, cond, rng, VsdOptions{});
    for (auto v : r.grad.values()) CHECK(v == 0.0f);
    Tape<float> tape;
    const auto zv = tape.leaf(z0);
    const auto g = tape.backward(vsd_surrogate(zv, r.grad)).of(zv);
    for (auto v : g.values()) CHECK(v == 0.0f);
  }

  SUBCASE("surrogate delivers exactly the gradient") {
    const auto g = random_tensor<float>(z0.shape(), 16, -3.0, 3.0);
    Tape<float> tape;
    const auto zv = tape.leaf(z0);
    CHECK(tape.backward(vsd_surrogate(zv, g)).of(zv).bit_equal(g));
  }

  SUBCASE("time range and weights") {
    auto lora = init_lora(f.net, f.base, 4, 108.0, 1);
    for (auto& e : lora.tensors.entries())
      if (e.name.ends_with(".B")) e.value = random_tensor<float>(e.value.shape(), 17, -0.05, 0.05);
    VsdOptions constant;
    constant.w_kind = WeightKind::Constant;
    CounterRng r1(5, 0), r2(5, 0);
    const auto sig = vsd_grad(z0, f.net, f.base, lora, f.sched, cond, r1, VsdOptions{});
    const auto con = vsd_grad(z0, f.net, f.base, lora, f.sched, cond, r2, constant);
    CHECK(sig.t == con.t);
    const auto per = z0.numel() / 3;
    for (std::int64_t b = 0; b < 3; ++b) {
      const auto tb = sig.t[static_cast<std::size_t>(b)];
      CHECK((tb >= 20 && tb <= 980));
      const auto w = static_cast<float>(1.0 - f.sched.alpha_bar(tb));
      for (std::int64_t i = b * per; i < (b + 1) * per; ++i) CHECK(sig.grad[i] == w * con.grad[i]);
    }
    double mag = 0.0;
    for (auto v : con.grad.values()) mag += std::abs(v);
    CHECK(mag > 0.0);
  }

  SUBCASE("sigma2 weight at alpha_bar 0.75 is a quarter of constant") {
    CHECK(vsd_weight(WeightKind::Sigma2, 0.75) == 0.25);
    CHECK(vsd_weight(WeightKind::Constant, 0.75) == 1.0);
    // Pin the drawn step to index 50, where alpha_bar is exactly 0.75.
    std::vector<double> ab;
    for (int t = 0; t < 100; ++t) ab.push_back(1.0 - 0.25 * (t + 1) / 51.0);
    const auto sched = schedule_from_alpha_bars(ab);
    REQUIRE(sched.alpha_bar(50) == 0.75);
    auto lora = init_lora(f.net, f.base, 4, 108.0, 1);
    for (auto& e : lora.tensors.entries())
      if (e.name.ends_with(".B")) e.value = random_tensor<float>(e.value.shape(), 18, -0.05, 0.05);
    VsdOptions sigma2;
    sigma2.t_min_frac = 0.5;
    sigma2.t_max_frac = 0.504;
    VsdOptions constant = sigma2;
    constant.w_kind = WeightKind::Constant;
    CounterRng r1(6, 0), r2(6, 0);
    const auto a = vsd_grad(z0, f.net, f.base, lora, sched, cond, r1, sigma2);
    const auto b = vsd_grad(z0, f.net, f.base, lora, sched, cond, r2, constant);
    for (auto t : a.t) CHECK(t == 50);
    for (std::int64_t i = 0; i < a.grad.numel(); ++i) CHECK(a.grad[i] == 0.25f * b.grad[i]);
  }

  SUBCASE("non-finite input") {
    auto bad = z0;
    bad[5] = std::nanf("");
    const auto lora = init_lora(f.net, f.base, 4, 108.0, 1);
    CounterRng rng(1, 0);
    try {
      vsd_grad(bad, f.net, f.base, lora, f.sched, cond, rng, VsdOptions{});
      FAIL("expected NonFinite");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::NonFinite);
    }
  }
}

TEST_CASE("KL regularizer") {
  SUBCASE("closed forms") {
    const auto unit = rows({{1, -1, 1, -1}, {-1, 1, -1, 1}});
    const auto shifted = rows({{2, 0, 2, 0}, {0, 2, 0, 2}});
    const std::vector<Var<float>> a{Var<float>::view(unit)}, b{Var<float>::view(shifted)};
    CHECK(kl_loss<float>(a).loss.value().item() == 0.0f);
    CHECK(kl_loss<float>(b).loss.value().item() == doctest::Approx(0.5).epsilon(1e-7));
    const std::vector<Var<float>> both{Var<float>::view(unit), Var<float>::view(shifted)};
    CHECK(kl_loss<float>(both).loss.value().item() == doctest::Approx(0.25).epsilon(1e-7));
    // mean 0, variance 4: 0.5 * (4 - 1 - ln 4)
    const auto wide = rows({{2, -2, 2, -2}});
    const std::vector<Var<float>> c{Var<float>::view(wide)};
    CHECK(kl_loss<float>(c).loss.value().item() == doctest::Approx(0.5 * (3.0 - std::log(4.0))).epsilon(1e-6));
  }
  SUBCASE("seeded standard normal") {
    const auto n = normal_tensor<double>(Shape{4, 3, 64, 64}, NoiseKey{3, 1}, 0);
    const std::vector<Var<double>> v{Var<double>::view(n)};
    const auto r = kl_loss<double>(v);
    CHECK(r.loss.value().item() < 1e-3);
    CHECK(!r.degenerate);
  }
  SUBCASE("degenerate variance is clamped and flagged") {
    const auto flat = rows({{0.5f, 0.5f, 0.5f}});
    const std::vector<Var<float>> v{Var<float>::view(flat)};
    const auto r = kl_loss<float>(v);
    CHECK(r.degenerate);
    CHECK(std::isfinite(r.loss.value().item()));
  }
  SUBCASE("gradient matches finite differences") {
    const GraphFn<double> fn = [](std::span<const Var<double>> in) {
      return kl_loss<double>(std::span<const Var<double>>(in.data(), in.size())).loss;
    };
    const auto r = finite_difference_check<double>(fn, {random_tensor<double>(Shape{2, 12}, 1), random_tensor<double>(Shape{2, 12}, 2)}, 1e-6, 3);
    CHECK(r.max_rel_err < 1e-6);
  }
}

TEST_CASE("adapter step") {
  Fixture f;
  const auto z0 = random_tensor<float>(Shape{2, 3, 8, 8}, 20);
  const auto cond = random_tensor<float>(Shape{2, 16}, 21);
  auto lora = init_lora(f.net, f.base, 4, 8.0, 1);
  AdamState<float> opt(lora.tensors, AdamConfig{1e-3});
  const auto base_hash = f.base.hash();

  SUBCASE("non-negative and base untouched") {
    CounterRng rng(2, 0);
    const auto before = lora.tensors.hash();
    for (int i = 0; i < 5; ++i) CHECK(lora_step(lora, f.net, f.base, z0, f.sched, cond, rng, opt) >= 0.0);
    CHECK(f.base.hash() == base_hash);
    CHECK(lora.tensors.hash() != before);
  }
  SUBCASE("overfits one fixed draw") {
    // Adapters only reach linear and 1x1 weights; the tiny net has too few of those to
    // memorize a noise image, so this uses the default architecture.
    const UNet<float> net(UNetConfig{});
    const auto full = net.init_params(3);
    const auto full_hash = full.hash();
    const auto x0 = random_tensor<float>(Shape{1, 3, 24, 24}, 20);
    const auto c = random_tensor<float>(Shape{1, 16}, 21);
    auto adapter = init_lora(net, full, 64, 108.0, 1);
    AdamState<float> adam(adapter.tensors, AdamConfig{1e-3});
    std::vector<double> losses;
    for (int i = 0; i < 200; ++i) {
      CounterRng rng(3, 0);  // same (t, eps) every step
      losses.push_back(lora_step(adapter, net, full, x0, f.sched, c, rng, adam));
    }
    INFO("initial ", losses.front(), " final ", losses.back());
    CHECK(losses.back() < 0.1 * losses.front());
    CHECK(full.hash() == full_hash);
  }
}

TEST_CASE("teacher training") {
  Fixture f;
  const auto spec = tiny_data_spec();

  SUBCASE("smoke run lowers the loss") {
    const auto data = generate_dataset(spec, 48, 1);
    TeacherConfig cfg;
    cfg.batch = 8;
    cfg.iterations = 100;
    cfg.seed = 2;
    std::vector<std::string> lines;
    const auto r = train_teacher(f.net, f.sched, data, cfg, [&](const std::string& l) { lines.push_back(l); });
    REQUIRE(r.losses.size() == 100);
    CHECK(std::isfinite(r.losses.front()));
    const double late = std::accumulate(r.losses.end() - 50, r.losses.end(), 0.0) / 50.0;
    INFO("first ", r.losses.front(), " late mean ", late);
    CHECK(late < r.losses.front());
    CHECK(!lines.empty());
    CHECK(!r.ema.bit_equal(r.raw));
  }
  SUBCASE("zero noise target overfits to zero") {
    const auto data = generate_dataset(spec, 1, 3);
    TeacherConfig cfg;
    cfg.batch = 1;
    cfg.iterations = 300;
    cfg.zero_noise = true;
    cfg.cond_drop_prob = 0.0;
    const auto r = train_teacher(f.net, f.sched, data, cfg);
    INFO("first ", r.losses.front(), " last ", r.losses.back());
    CHECK(r.losses.back() < 0.02 * r.losses.front());
  }
  SUBCASE("deterministic") {
    const auto data = generate_dataset(spec, 16, 4);
    TeacherConfig cfg;
    cfg.batch = 4;
    cfg.iterations = 5;
    CHECK(train_teacher(f.net, f.sched, data, cfg).ema.bit_equal(train_teacher(f.net, f.sched, data, cfg).ema));
  }
  SUBCASE("empty dataset") {
    try {
      train_teacher(f.net, f.sched, {}, TeacherConfig{});
      FAIL("expected EmptyDataset");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::EmptyDataset);
    }
  }
}

TEST_CASE("distillation loop") {
  Fixture f;
  const auto prompts = prompt_set();

  SUBCASE("zero iterations reproduce the teacher") {
    auto cfg = tiny_distill(0);
    cfg.kl_weight = 0.0;
    const auto r = distill_loop(f.net, f.sched, f.base, cfg, prompts);
    CHECK(r.student_raw.bit_equal(f.base));
    CHECK(r.student_ema.bit_equal(f.base));
    CHECK(r.plan.k == 2);
  }
  SUBCASE("two runs are bit-identical and isolation holds") {
    auto cfg = tiny_distill(3);
    cfg.check_isolation = true;
    std::vector<std::string> lines;
    const auto a = distill_loop(f.net, f.sched, f.base, cfg, prompts, [&](const std::string& l) { lines.push_back(l); });
    cfg.check_isolation = false;
    const auto b = distill_loop(f.net, f.sched, f.base, cfg, prompts);
    CHECK(a.student_raw.bit_equal(b.student_raw));
    CHECK(a.student_ema.bit_equal(b.student_ema));
    CHECK(a.lora.tensors.bit_equal(b.lora.tensors));
    CHECK(!a.student_raw.bit_equal(f.base));
    CHECK(a.log.size() == 3);
    for (const auto& row : a.log) {
      CHECK(std::isfinite(row.vsd_loss));
      CHECK(row.kl_loss >= 0.0);
      CHECK(row.lora_loss >= 0.0);
    }
    CHECK(!lines.empty());
    cfg.seed = 12;
    CHECK(!distill_loop(f.net, f.sched, f.base, cfg, prompts).student_raw.bit_equal(a.student_raw));
  }
  SUBCASE("config validation") {
    auto cfg = tiny_distill(1);
    cfg.t_min_frac = 0.9;
    cfg.t_max_frac = 0.5;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = tiny_distill(1);
    cfg.guidance_scale = -1.0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = tiny_distill(1);
    CHECK_THROWS_AS(distill_loop(f.net, f.sched, f.base, cfg, {}), Error);
  }
  SUBCASE("weight kind names") {
    CHECK(weight_kind_from_string(to_string(WeightKind::Sigma2)) == WeightKind::Sigma2);
    CHECK(weight_kind_from_string(to_string(WeightKind::Constant)) == WeightKind::Constant);
    CHECK_THROWS_AS(weight_kind_from_string("cosine"), Error);
  }
}
