// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "support.hpp"
#include "tiue/distill.hpp"

using namespace tiue;
using namespace tiue::testing;

namespace {

double l2_diff(const Tensor<float>& a, const Tensor<float>& b) {
  double s = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) s += (static_cast<double>(a[i]) - b[i]) * (static_cast<double>(a[i]) - b[i]);
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("config validation") {
  UNetConfig c;
  CHECK_NOTHROW(c.validate());
  c.image_size = 22;  // not divisible by 4
  CHECK_THROWS_AS(c.validate(), Error);
  c = UNetConfig{};
  c.groups = 5;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("default config parameter count") {
  const UNet<float> net(UNetConfig{});
  const auto p = net.init_params(0);
  MESSAGE("default parameters: ", p.total_elements());
  CHECK(p.total_elements() > 0);
  CHECK(p.hash() == net.init_params(0).hash());
  CHECK(p.hash() != net.init_params(1).hash());
}

TEST_CASE("sinusoid and time embedding") {
  const UNet<float> net(tiny_config());
  const auto params = net.init_params(1);
  const ParamBinding<float> p(params);
  const std::vector<std::int64_t> t0{0};
  const auto s = net.sinusoid(t0);
  const auto half = s.dim(1) / 2;
  for (std::int64_t i = 0; i < half; ++i) {
    CHECK(s[i] == 0.0f);
    CHECK(s[half + i] == 1.0f);
  }
  const Tensor<float> cond(Shape{1, 16});
  const std::vector<std::int64_t> a{100}, b{101};
  const auto ea = net.embedding(p, a, Var<float>::view(cond)).value();
  CHECK(ea.bit_equal(net.embedding(p, a, Var<float>::view(cond)).value()));
  CHECK(l2_diff(ea, net.embedding(p, b, Var<float>::view(cond)).value()) > 0.0);
}

TEST_CASE("encoder cache structure and determinism") {
  const UNet<float> net(UNetConfig{});
  const auto params = net.init_params(2);
  const ParamBinding<float> p(params);
  const auto z = random_tensor<float>(Shape{2, 3, 24, 24}, 3, -3.0, 3.0);
  const auto cond = random_tensor<float>(Shape{2, 16}, 4);
  const auto t = UNet<float>::same_t(500, 2);
  const auto c1 = net.encode(p, Var<float>::view(z), t, cond);
  const auto c2 = net.encode(p, Var<float>::view(z), t, cond);
  CHECK(static_cast<int>(c1.skips.size()) == net.config().encoder_stage_count() + 1);
  for (std::size_t i = 0; i < c1.skips.size(); ++i) CHECK(c1.skips[i].value().bit_equal(c2.skips[i].value()));
  CHECK(c1.mid.value().bit_equal(c2.mid.value()));
  CHECK(c1.key_step == t);

  const auto out = net.decode(p, c1, t).value();
  CHECK(out.shape() == z.shape());
  CHECK(out.all_finite());
}

TEST_CASE("no cross-batch mixing") {
  const UNet<float> net(tiny_config());
  const auto params = net.init_params(5);
  const ParamBinding<float> p(params);
  const auto z = random_tensor<float>(Shape{2, 3, 8, 8}, 6);
  const auto cond = random_tensor<float>(Shape{2, 16}, 7);
  const std::vector<std::int64_t> t{300, 600};
  const auto both = net.forward(p, Var<float>::view(z), t, cond).value();
  const auto per = z.numel() / 2;
  for (std::int64_t b = 0; b < 2; ++b) {
    Tensor<float> zb(Shape{1, 3, 8, 8}, std::vector<float>(z.data() + b * per, z.data() + (b + 1) * per));
    Tensor<float> cb(Shape{1, 16}, std::vector<float>(cond.data() + b * 16, cond.data() + (b + 1) * 16));
    const std::vector<std::int64_t> tb{t[static_cast<std::size_t>(b)]};
    const auto one = net.forward(p, Var<float>::view(zb), tb, cb).value();
    for (std::int64_t i = 0; i < per; ++i) CHECK(one[i] == both[b * per + i]);
  }
}

TEST_CASE("split pass identities") {
  const UNet<float> net(tiny_config());
  const auto params = net.init_params(8);
  const ParamBinding<float> p(params);
  const auto z = random_tensor<float>(Shape{2, 3, 8, 8}, 9);
  const auto cond = random_tensor<float>(Shape{2, 16}, 10);
  const auto t = UNet<float>::same_t(250, 2);
  const auto cache = net.encode(p, Var<float>::view(z), t, cond);

  std::uint64_t before = 0;
  for (const auto& s : cache.skips) before ^= content_hash(s.value()) + 0x9e37 * before;
  before ^= content_hash(cache.mid.value());

  CHECK(net.forward(p, Var<float>::view(z), t, cond).value().bit_equal(net.decode(p, cache, t).value()));
  const auto d1 = net.decode(p, cache, UNet<float>::same_t(100, 2)).value();
  const auto d1b = net.decode(p, cache, UNet<float>::same_t(100, 2)).value();
  const auto d2 = net.decode(p, cache, UNet<float>::same_t(900, 2)).value();
  CHECK(d1.bit_equal(d1b));
  CHECK(l2_diff(d1, d2) > 0.0);

  std::uint64_t after = 0;
  for (const auto& s : cache.skips) after ^= content_hash(s.value()) + 0x9e37 * after;
  after ^= content_hash(cache.mid.value());
  CHECK(before == after);
}

TEST_CASE("decoder rejects a mismatched cache") {
  const UNet<float> net(tiny_config());
  const auto params = net.init_params(8);
  const ParamBinding<float> p(params);
  const auto z = random_tensor<float>(Shape{1, 3, 8, 8}, 9);
  const Tensor<float> cond(Shape{1, 16});
  auto cache = net.encode(p, Var<float>::view(z), UNet<float>::same_t(10, 1), cond);
  cache.skips.pop_back();
  try {
    net.decode(p, cache, UNet<float>::same_t(10, 1));
    FAIL("expected CacheMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::CacheMismatch);
  }
}

TEST_CASE("input gradient of the full pass matches finite differences") {
  const UNet<double> net(tiny_config());
  const auto params = net.init_params(12);
  const auto cond = random_tensor<double>(Shape{1, 16}, 13);
  const GraphFn<double> f = [&](std::span<const Var<double>> in) {
    const ParamBinding<double> p(params);
    return net.forward(p, in[0], UNet<double>::same_t(400, 1), cond);
  };
  const auto r = finite_difference_check<double>(f, {random_tensor<double>(Shape{1, 3, 8, 8}, 14, -2.0, 2.0)}, 1e-6, 15);
  CHECK(r.max_rel_err < 1e-5);
}

TEST_CASE("parameter gradient through encode, K decodes and the combination") {
  const auto r64 = student_graph_check<double>(21, 4, 4, 24);
  INFO(r64.worst_input, " ", r64.max_rel_err);
  CHECK(r64.max_rel_err < 1e-5);
}

TEST_CASE("outputs finite on wide random inputs") {
  const UNet<float> net(UNetConfig{});
  const auto params = net.init_params(30);
  const ParamBinding<float> p(params);
  const auto z = random_tensor<float>(Shape{2, 3, 24, 24}, 31, -3.0, 3.0);
  CHECK(net.forward(p, Var<float>::view(z), UNet<float>::same_t(999, 2), random_tensor<float>(Shape{2, 16}, 32)).value().all_finite());
}
