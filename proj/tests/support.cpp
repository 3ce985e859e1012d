// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "tiue/distill.hpp"

namespace tiue::testing {

UNetConfig tiny_config() {
  UNetConfig c;
  c.image_size = 8;
  c.base_channels = 8;
  c.channel_mults = {1, 2};
  c.resblocks = 1;
  c.time_embed_dim = 16;
  c.cond_dim = 16;
  c.groups = 4;
  return c;
}

UNetConfig small_config() {
  UNetConfig c;
  c.base_channels = 16;
  c.channel_mults = {1, 2, 2};
  c.resblocks = 1;
  c.time_embed_dim = 64;
  return c;
}

template <class T>
Tensor<T> random_tensor(const Shape& shape, std::uint64_t seed, double lo, double hi) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<T> t(shape);
  for (auto& v : t.values()) v = static_cast<T>(dist(gen));
  return t;
}

namespace {

template <class T>
double contract(const Tensor<T>& out, const Tensor<T>& weights) {
  double s = 0.0;
  for (std::int64_t i = 0; i < out.numel(); ++i) s += static_cast<double>(out[i]) * static_cast<double>(weights[i]);
  return s;
}

double rel_err(const std::vector<double>& a, const std::vector<double>& n) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - n[i]) * (a[i] - n[i]);
    na += a[i] * a[i];
    nn += n[i] * n[i];
  }
  const double denom = std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
  return std::sqrt(diff) / denom;
}

}  // namespace

template <class T>
GradReport finite_difference_check(const GraphFn<T>& f, const std::vector<Tensor<T>>& inputs, double h, std::uint64_t seed) {
  // Probe output shape once to size the contraction weights.
  std::vector<Var<T>> consts;
  for (const auto& t : inputs) consts.push_back(Var<T>::constant(t));
  const auto probe = f(consts).value();
  const auto weights = random_tensor<T>(probe.shape(), seed ^ 0x5eedULL);

  Tape<T> tape;
  std::vector<Var<T>> leaves;
  for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
  const auto out = f(leaves);
  const auto loss = ops::sum(ops::mul(out, Var<T>::constant(weights)));
  const auto grads = tape.backward(loss);

  GradReport report;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto analytic = grads.of(leaves[i]);
    std::vector<double> a, n;
    auto work = inputs;
    for (std::int64_t e = 0; e < work[i].numel(); ++e) {
      const T x = inputs[i][e];
      auto eval = [&](T v) {
        work[i][e] = v;
        std::vector<Var<T>> vs;
        for (const auto& t : work) vs.push_back(Var<T>::view(t));
        return contract(f(vs).value(), weights);
      };
      const T xp = static_cast<T>(static_cast<double>(x) + h), xm = static_cast<T>(static_cast<double>(x) - h);
      const double up = eval(xp), down = eval(xm);
      work[i][e] = x;
      a.push_back(static_cast<double>(analytic[e]));
      n.push_back((up - down) / (static_cast<double>(xp) - static_cast<double>(xm)));
    }
    const double r = rel_err(a, n);
    if (r >= report.max_rel_err) {
      report.max_rel_err = r;
      report.worst_input = "input " + std::to_string(i);
    }
  }
  return report;
}

std::vector<PrimitiveCase> primitive_cases() {
  using K = PrimitiveKind;
  std::vector<PrimitiveCase> c;
  PrimitiveAttrs pad1;
  pad1.padding = 1;
  c.push_back({K::Conv2d, {{2, 3, 5, 5}, {4, 3, 3, 3}, {4}}, pad1});
  c.push_back({K::Conv2d, {{2, 3, 5, 5}, {4, 3, 3, 3}, {4}}, {}});
  c.push_back({K::Linear, {{3, 5}, {4, 5}, {4}}, {}});
  c.push_back({K::Matmul, {{3, 4}, {4, 2}}, {}});
  PrimitiveAttrs gn;
  gn.groups = 2;
  c.push_back({K::GroupNorm, {{2, 4, 3, 3}, {4}, {4}}, gn});
  c.push_back({K::Silu, {{2, 3, 4}}, {}});
  c.push_back({K::Add, {{2, 3}, {2, 3}}, {}});
  c.push_back({K::Sub, {{2, 3}, {2, 3}}, {}});
  c.push_back({K::Mul, {{2, 3}, {2, 3}}, {}});
  PrimitiveAttrs s1;
  s1.scalar = 1.7;
  c.push_back({K::MulScalar, {{2, 3}}, s1});
  PrimitiveAttrs s2;
  s2.scalar = 0.3;
  c.push_back({K::AddScalar, {{2, 3}}, s2});
  c.push_back({K::Square, {{2, 3}}, {}});
  c.push_back({K::Log, {{2, 3}}, {}, 0.5, 2.0});
  PrimitiveAttrs cm;
  cm.scalar = 0.0;
  c.push_back({K::ClampMin, {{3, 4}}, cm});
  c.push_back({K::ConcatChannels, {{2, 2, 3, 3}, {2, 3, 3, 3}}, {}});
  c.push_back({K::AvgPool2, {{2, 3, 4, 4}}, {}});
  c.push_back({K::UpsampleNearest2, {{2, 3, 2, 2}}, {}});
  c.push_back({K::Sum, {{3, 4}}, {}});
  c.push_back({K::Mean, {{3, 4}}, {}});
  PrimitiveAttrs rs;
  rs.shape = {3, 4};
  c.push_back({K::Reshape, {{2, 6}}, rs});
  c.push_back({K::Film, {{2, 3, 4, 4}, {2, 6}}, {}});
  c.push_back({K::RowMean, {{3, 2, 4}}, {}});
  c.push_back({K::RowVar, {{3, 2, 4}}, {}});
  return c;
}

template <class T>
GradReport primitive_gradient_check(const PrimitiveCase& c, std::uint64_t seed) {
  std::vector<Tensor<T>> inputs;
  for (std::size_t i = 0; i < c.shapes.size(); ++i) {
    auto t = random_tensor<T>(c.shapes[i], seed + 17 * i, c.lo, c.hi);
    if (c.kind == PrimitiveKind::ClampMin)  // keep clear of the kink
      for (auto& v : t.values())
        if (std::abs(static_cast<double>(v) - c.attrs.scalar) < 0.1) v = static_cast<T>(c.attrs.scalar + 0.3);
    inputs.push_back(std::move(t));
  }
  const double h = std::is_same_v<T, double> ? 1e-6 : 1e-2;
  const GraphFn<T> f = [&](std::span<const Var<T>> in) { return forward_primitive<T>(c.kind, in, c.attrs); };
  auto r = finite_difference_check<T>(f, inputs, h, seed);
  r.worst_input = std::string(primitive_name(c.kind)) + " " + r.worst_input;
  return r;
}

template <class T>
GradReport student_graph_check(std::uint64_t seed, std::int64_t k, int directions, int coordinates) {
  const UNet<T> net(tiny_config());
  auto params = net.init_params(seed);
  // Non-trivial biases and norm affine terms so every path carries signal.
  std::mt19937_64 gen(seed * 7 + 1);
  std::normal_distribution<double> nd(0.0, 0.1);
  for (auto& e : params.entries())
    if (e.value.rank() == 1)
      for (auto& v : e.value.values()) v = static_cast<T>(static_cast<double>(v) + nd(gen));

  const auto sched = build_schedule(ScheduleParams{});
  const auto plan = make_plan(k, sched);
  const auto& cfg = net.config();
  const auto noise = random_tensor<T>(Shape{2, cfg.in_channels, cfg.image_size, cfg.image_size}, seed + 1, -2.0, 2.0);
  const auto cond = random_tensor<T>(Shape{2, cfg.cond_dim}, seed + 2);
  const auto weights = random_tensor<T>(noise.shape(), seed + 3);

  auto loss_of = [&](const ParamStore<T>& p) {
    const ParamBinding<T> b(p);
    return contract(student_one_pass(net, b, noise, plan, cond).z0.value(), weights);
  };

  Tape<T> tape;
  const ParamBinding<T> bound(params, tape);
  const auto pass = student_one_pass(net, bound, noise, plan, cond);
  const auto loss = ops::sum(ops::mul(pass.z0, Var<T>::constant(weights)));
  const auto grads = bound.gradients(tape.backward(loss));

  const bool is_double = std::is_same_v<T, double>;
  GradReport report;
  std::vector<double> a, n;
  for (int d = 0; d < directions; ++d) {
    // Unit-norm direction, so h is the length of the whole parameter step.
    const double h = is_double ? 1e-5 : 1e-2;
    std::normal_distribution<double> unit(0.0, 1.0);
    std::vector<std::vector<double>> v(params.entries().size());
    double norm = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i)
      for (std::int64_t e = 0; e < params.entries()[i].value.numel(); ++e) {
        v[i].push_back(unit(gen));
        norm += v[i].back() * v[i].back();
      }
    norm = std::sqrt(norm);
    ParamStore<T> plus = params, minus = params;
    double dir = 0.0, step = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      auto& pe = plus.entries()[i].value;
      auto& me = minus.entries()[i].value;
      const auto& g = grads[i];
      for (std::int64_t e = 0; e < pe.numel(); ++e) {
        const double u = v[i][static_cast<std::size_t>(e)] / norm;
        const T x = params.entries()[i].value[e];
        pe[e] = static_cast<T>(static_cast<double>(x) + h * u);
        me[e] = static_cast<T>(static_cast<double>(x) - h * u);
        // Rounded step actually taken along this coordinate.
        const double taken = static_cast<double>(pe[e]) - static_cast<double>(me[e]);
        dir += static_cast<double>(g[e]) * taken;
        step += taken * u;
      }
    }
    a.push_back(dir / step);
    n.push_back((loss_of(plus) - loss_of(minus)) / step);
  }
  report.max_rel_err = rel_err(a, n);
  report.worst_input = "random directions";

  a.clear();
  n.clear();
  for (int c = 0; c < coordinates; ++c) {
    const auto i = static_cast<std::size_t>(gen() % params.entries().size());
    const auto& base = params.entries()[i].value;
    const auto e = static_cast<std::int64_t>(gen() % static_cast<std::uint64_t>(base.numel()));
    const double h = is_double ? 1e-6 : 1e-2;
    ParamStore<T> plus = params, minus = params;
    const T x = base[e];
    plus.entries()[i].value[e] = static_cast<T>(static_cast<double>(x) + h);
    minus.entries()[i].value[e] = static_cast<T>(static_cast<double>(x) - h);
    const double span = static_cast<double>(plus.entries()[i].value[e]) - static_cast<double>(minus.entries()[i].value[e]);
    a.push_back(static_cast<double>(grads[i][e]));
    n.push_back((loss_of(plus) - loss_of(minus)) / span);
  }
  const double coord = rel_err(a, n);
  if (coord > report.max_rel_err) {
    report.max_rel_err = coord;
    report.worst_input = "sampled coordinates";
  }
  return report;
}

std::vector<long double> reference_ddim_chain(const std::vector<long double>& noise, const std::vector<std::vector<long double>>& preds,
                                              const std::vector<double>& alpha_bars_in_order, double alpha_bar_terminal) {
  auto z = noise;
  for (std::size_t j = 0; j < preds.size(); ++j) {
    const long double ab = alpha_bars_in_order[j];
    const long double abp = j + 1 < preds.size() ? alpha_bars_in_order[j + 1] : alpha_bar_terminal;
    for (std::size_t i = 0; i < z.size(); ++i) {
      const long double x0 = (z[i] - std::sqrt(1.0L - ab) * preds[j][i]) / std::sqrt(ab);
      z[i] = std::sqrt(abp) * x0 + std::sqrt(1.0L - abp) * preds[j][i];
    }
  }
  return z;
}

BruteMetrics brute_force_metrics(const std::vector<std::vector<double>>& real, const std::vector<std::vector<double>>& fake, int k) {
  auto dist = [](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
  };
  auto radii = [&](const std::vector<std::vector<double>>& set) {
    std::vector<double> r;
    for (std::size_t i = 0; i < set.size(); ++i) {
      std::vector<double> d;
      for (std::size_t j = 0; j < set.size(); ++j)
        if (j != i) d.push_back(dist(set[i], set[j]));
      std::sort(d.begin(), d.end());
      r.push_back(d[static_cast<std::size_t>(k - 1)]);
    }
    return r;
  };
  const auto rr = radii(real), rf = radii(fake);
  BruteMetrics m{0, 0, 0, 0};
  for (const auto& f : fake) {
    bool any = false;
    for (std::size_t i = 0; i < real.size(); ++i)
      if (dist(f, real[i]) <= rr[i]) {
        any = true;
        m.density += 1.0;
      }
    if (any) m.precision += 1.0;
  }
  for (const auto& r : real) {
    for (std::size_t j = 0; j < fake.size(); ++j)
      if (dist(r, fake[j]) <= rf[j]) {
        m.recall += 1.0;
        break;
      }
  }
  for (std::size_t i = 0; i < real.size(); ++i)
    for (const auto& f : fake)
      if (dist(f, real[i]) <= rr[i]) {
        m.coverage += 1.0;
        break;
      }
  m.precision /= static_cast<double>(fake.size());
  m.recall /= static_cast<double>(real.size());
  m.density /= static_cast<double>(k) * static_cast<double>(fake.size());
  m.coverage /= static_cast<double>(real.size());
  return m;
}

template Tensor<float> random_tensor(const Shape&, std::uint64_t, double, double);
template Tensor<double> random_tensor(const Shape&, std::uint64_t, double, double);
template GradReport finite_difference_check(const GraphFn<float>&, const std::vector<Tensor<float>>&, double, std::uint64_t);
template GradReport finite_difference_check(const GraphFn<double>&, const std::vector<Tensor<double>>&, double, std::uint64_t);
template GradReport primitive_gradient_check<float>(const PrimitiveCase&, std::uint64_t);
template GradReport primitive_gradient_check<double>(const PrimitiveCase&, std::uint64_t);
template GradReport student_graph_check<float>(std::uint64_t, std::int64_t, int, int);
template GradReport student_graph_check<double>(std::uint64_t, std::int64_t, int, int);

}  // namespace tiue::testing
