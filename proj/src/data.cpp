// SPDX-License-Identifier: Apache-2.0
#include "tiue/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tiue/random.hpp"

namespace tiue {

namespace {

constexpr std::uint64_t kEmbedTableSeed = 0x7469756563656d62ULL;
constexpr int kSuper = 4;  // supersamples per pixel axis

bool inside(int shape_id, double x, double y, double cx, double cy, double r) {
  const double dx = x - cx, dy = y - cy;
  switch (shape_id) {
    case 0: return dx * dx + dy * dy <= r * r;
    case 1: return std::abs(dx) <= r * 0.85 && std::abs(dy) <= r * 0.85;
    case 2: {
      // Upward triangle inscribed in the circle of radius r.
      const double top = cy - r, base = cy + 0.5 * r;
      if (y < top || y > base) return false;
      const double half_w = (y - top) / (base - top) * (r * std::sqrt(3.0) / 2.0);
      return std::abs(dx) <= half_w;
    }
    default: return false;
  }
}

std::vector<std::vector<double>> build_embed_table() {
  CounterRng rng(kEmbedTableSeed, 0);
  std::vector<std::vector<double>> rows;
  for (int c = 0; c < kClassCount; ++c) {
    std::vector<double> v(kCondDim);
    for (auto& x : v) x = rng.normal();
    for (const auto& prev : rows) {
      double d = 0.0;
      for (int i = 0; i < kCondDim; ++i) d += v[static_cast<std::size_t>(i)] * prev[static_cast<std::size_t>(i)];
      for (int i = 0; i < kCondDim; ++i) v[static_cast<std::size_t>(i)] -= d * prev[static_cast<std::size_t>(i)];
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    for (auto& x : v) x /= norm;
    rows.push_back(std::move(v));
  }
  return rows;
}

}  // namespace

const char* shape_name(int shape_id) {
  static const char* names[] = {"circle", "square", "triangle"};
  if (shape_id < 0 || shape_id >= kShapeCount) fail(ErrorCode::UnknownClass, "shape id " + std::to_string(shape_id));
  return names[shape_id];
}

const char* color_name(int color_id) {
  static const char* names[] = {"red", "green", "blue", "yellow"};
  if (color_id < 0 || color_id >= kColorCount) fail(ErrorCode::UnknownClass, "color id " + std::to_string(color_id));
  return names[color_id];
}

std::array<double, 3> color_rgb(int color_id) {
  static const std::array<double, 3> rgb[] = {{1.0, -1.0, -1.0}, {-1.0, 1.0, -1.0}, {-1.0, -1.0, 1.0}, {1.0, 1.0, -1.0}};
  if (color_id < 0 || color_id >= kColorCount) fail(ErrorCode::UnknownClass, "color id " + std::to_string(color_id));
  return rgb[color_id];
}

void ToySpec::validate() const {
  if (image_size < 4) fail(ErrorCode::InvalidSpec, "image_size must be >= 4");
  if (!(size_min > 0.0 && size_min <= size_max)) fail(ErrorCode::InvalidSpec, "need 0 < size_min <= size_max");
  if (position_jitter < 0.0) fail(ErrorCode::InvalidSpec, "position_jitter must be >= 0");
  if (!(background >= -1.0 && background <= 1.0)) fail(ErrorCode::InvalidSpec, "background must lie in [-1, 1]");
  if (size_max + position_jitter + 1.0 > image_size / 2.0) fail(ErrorCode::InvalidSpec, "shapes could leave the canvas");
}

std::vector<double> cond_embed(int shape_id, int color_id) {
  if (shape_id < 0 || shape_id >= kShapeCount || color_id < 0 || color_id >= kColorCount)
    fail(ErrorCode::UnknownClass, "unknown class (" + std::to_string(shape_id) + ", " + std::to_string(color_id) + ")");
  static const auto table = build_embed_table();
  return table[static_cast<std::size_t>(shape_id * kColorCount + color_id)];
}

std::vector<std::vector<double>> prompt_set() {
  std::vector<std::vector<double>> out;
  for (int c = 0; c < kClassCount; ++c) out.push_back(cond_embed(c));
  return out;
}

std::vector<std::vector<double>> cycled_conditions(std::int64_t n) {
  std::vector<std::vector<double>> out;
  for (std::int64_t i = 0; i < n; ++i) out.push_back(cond_embed(static_cast<int>(i % kClassCount)));
  return out;
}

Tensor<float> render_shape(const ToySpec& spec, int shape_id, int color_id, double cx, double cy, double r) {
  const auto rgb = color_rgb(color_id);
  shape_name(shape_id);
  const int n = spec.image_size;
  Tensor<float> img(Shape{3, n, n});
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      int hits = 0;
      for (int sy = 0; sy < kSuper; ++sy)
        for (int sx = 0; sx < kSuper; ++sx)
          hits += inside(shape_id, x + (sx + 0.5) / kSuper, y + (sy + 0.5) / kSuper, cx, cy, r) ? 1 : 0;
      const double cov = static_cast<double>(hits) / (kSuper * kSuper);
      for (int c = 0; c < 3; ++c)
        img[(c * n + y) * n + x] = static_cast<float>(cov * rgb[static_cast<std::size_t>(c)] + (1.0 - cov) * spec.background);
    }
  return img;
}

std::vector<ToySample> generate_dataset(const ToySpec& spec, std::int64_t n, std::uint64_t seed) {
  spec.validate();
  if (n < 1) fail(ErrorCode::InvalidSpec, "dataset size must be >= 1");
  CounterRng rng(seed, 0x64617461ULL);
  std::vector<int> classes(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) classes[static_cast<std::size_t>(i)] = static_cast<int>(i % kClassCount);
  for (std::int64_t i = n - 1; i > 0; --i) std::swap(classes[static_cast<std::size_t>(i)], classes[static_cast<std::size_t>(rng.below(i + 1))]);

  std::vector<ToySample> out;
  out.reserve(static_cast<std::size_t>(n));
  const double mid = spec.image_size / 2.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const int cls = classes[static_cast<std::size_t>(i)];
    const double r = spec.size_min + (spec.size_max - spec.size_min) * rng.uniform();
    const double cx = mid + spec.position_jitter * (2.0 * rng.uniform() - 1.0);
    const double cy = mid + spec.position_jitter * (2.0 * rng.uniform() - 1.0);
    ToySample s;
    s.shape_id = cls / kColorCount;
    s.color_id = cls % kColorCount;
    s.image = render_shape(spec, s.shape_id, s.color_id, cx, cy, r);
    out.push_back(std::move(s));
  }
  return out;
}

template <class T>
Tensor<T> stack_images(const std::vector<ToySample>& samples, std::size_t begin, std::size_t count) {
  if (count == 0 || begin + count > samples.size()) fail(ErrorCode::InvalidRange, "image slice out of range");
  const auto& s0 = samples[begin].image.shape();
  Shape shape{static_cast<std::int64_t>(count), s0[0], s0[1], s0[2]};
  Tensor<T> out(shape);
  const auto per = samples[begin].image.numel();
  for (std::size_t i = 0; i < count; ++i) {
    const auto& img = samples[begin + i].image;
    if (img.shape() != s0) fail(ErrorCode::ShapeMismatch, "images differ in shape");
    for (std::int64_t j = 0; j < per; ++j) out[static_cast<std::int64_t>(i) * per + j] = static_cast<T>(img[j]);
  }
  return out;
}

template <class T>
Tensor<T> stack_conds(const std::vector<std::vector<double>>& conds) {
  if (conds.empty()) fail(ErrorCode::InvalidRange, "no conditions");
  const auto d = static_cast<std::int64_t>(conds.front().size());
  Tensor<T> out(Shape{static_cast<std::int64_t>(conds.size()), d});
  for (std::size_t i = 0; i < conds.size(); ++i) {
    if (static_cast<std::int64_t>(conds[i].size()) != d) fail(ErrorCode::DimMismatch, "condition rows differ in length");
    for (std::int64_t j = 0; j < d; ++j) out[static_cast<std::int64_t>(i) * d + j] = static_cast<T>(conds[i][static_cast<std::size_t>(j)]);
  }
  return out;
}

template Tensor<float> stack_images(const std::vector<ToySample>&, std::size_t, std::size_t);
template Tensor<double> stack_images(const std::vector<ToySample>&, std::size_t, std::size_t);
template Tensor<float> stack_conds(const std::vector<std::vector<double>>&);
template Tensor<double> stack_conds(const std::vector<std::vector<double>>&);

}  // namespace tiue
