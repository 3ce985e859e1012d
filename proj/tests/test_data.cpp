// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <array>
#include <cmath>

#include "support.hpp"
#include "tiue/data.hpp"

using namespace tiue;

namespace {

double distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("condition table") {
  for (int c = 0; c < kClassCount; ++c) {
    const auto v = cond_embed(c);
    REQUIRE(v.size() == static_cast<std::size_t>(kCondDim));
    double n = 0.0;
    for (double x : v) n += x * x;
    CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(v == cond_embed(c / kColorCount, c % kColorCount));
  }
  double min_dist = 1e9;
  for (int a = 0; a < kClassCount; ++a)
    for (int b = a + 1; b < kClassCount; ++b) min_dist = std::min(min_dist, distance(cond_embed(a), cond_embed(b)));
  CHECK(min_dist >= 0.5);

  TIUE_CHECK_CODE(cond_embed(3, 0), ErrorCode::UnknownClass);
  TIUE_CHECK_CODE(cond_embed(0, 4), ErrorCode::UnknownClass);
  TIUE_CHECK_CODE(cond_embed(-1, 0), ErrorCode::UnknownClass);

  const auto prompts = prompt_set();
  CHECK(prompts.size() == static_cast<std::size_t>(kClassCount));
  const auto cycled = cycled_conditions(30);
  CHECK(cycled[13] == cond_embed(1));
}

TEST_CASE("dataset generation") {
  const ToySpec spec;
  const auto a = generate_dataset(spec, 60, 7);
  const auto b = generate_dataset(spec, 60, 7);
  REQUIRE(a.size() == 60);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].image.bit_equal(b[i].image));
    CHECK(a[i].class_id() == b[i].class_id());
  }
  const auto c = generate_dataset(spec, 60, 8);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) differs |= !a[i].image.bit_equal(c[i].image);
  CHECK(differs);

  for (const auto& s : a) {
    CHECK(s.image.shape() == Shape{3, 24, 24});
    for (auto v : s.image.values()) CHECK((v >= -1.0f && v <= 1.0f));
  }

  TIUE_CHECK_CODE(generate_dataset(spec, 0, 1), ErrorCode::InvalidSpec);
  ToySpec bad = spec;
  bad.size_max = 20.0;
  TIUE_CHECK_CODE(generate_dataset(bad, 4, 1), ErrorCode::InvalidSpec);
  bad = spec;
  bad.size_min = 6.0;
  bad.size_max = 5.0;
  TIUE_CHECK_CODE(generate_dataset(bad, 4, 1), ErrorCode::InvalidSpec);
}

TEST_CASE("class histogram is near uniform") {
  const auto d = generate_dataset(ToySpec{}, 12000, 3);
  std::array<int, kClassCount> counts{};
  for (const auto& s : d) ++counts[static_cast<std::size_t>(s.class_id())];
  for (int c : counts) CHECK(std::abs(c - 1000) < 50);
}

TEST_CASE("rendering") {
  const ToySpec spec;
  const auto img = render_shape(spec, 1, 2, 12.0, 12.0, 6.0);  // square, centered
  const auto rgb = color_rgb(2);
  const auto at = [&](int ch, int y, int x) { return static_cast<double>(img[(ch * 24 + y) * 24 + x]); };
  for (int ch = 0; ch < 3; ++ch) {
    CHECK(at(ch, 12, 12) == doctest::Approx(rgb[static_cast<std::size_t>(ch)]).epsilon(1e-6));
    CHECK(at(ch, 0, 0) == doctest::Approx(spec.background).epsilon(1e-6));
  }
  // An edge that cuts through a pixel blends it.
  const auto half = render_shape(spec, 1, 0, 12.0, 12.0, 5.5);
  bool blended = false;
  for (auto v : half.values()) blended |= v > -1.0f + 1e-3f && v < 1.0f - 1e-3f && std::abs(v - static_cast<float>(spec.background)) > 1e-3f;
  CHECK(blended);
  CHECK(render_shape(spec, 2, 3, 12.0, 12.0, 6.0).bit_equal(render_shape(spec, 2, 3, 12.0, 12.0, 6.0)));
  for (int s = 0; s < kShapeCount; ++s) CHECK(!std::string(shape_name(s)).empty());
}

TEST_CASE("stacking") {
  const auto d = generate_dataset(ToySpec{}, 5, 1);
  const auto x = stack_images<float>(d, 1, 3);
  CHECK(x.shape() == Shape{3, 3, 24, 24});
  for (std::int64_t i = 0; i < 3 * 24 * 24; ++i) CHECK(x[i] == d[1].image[i]);
  const auto c = stack_conds<double>({cond_embed(0), cond_embed(5)});
  CHECK(c.shape() == Shape{2, 16});
  CHECK(c[16 + 3] == cond_embed(5)[3]);
}
