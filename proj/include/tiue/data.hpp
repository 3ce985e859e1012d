// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "tiue/tensor.hpp"

namespace tiue {

inline constexpr int kShapeCount = 3;
inline constexpr int kColorCount = 4;
inline constexpr int kClassCount = kShapeCount * kColorCount;
inline constexpr int kCondDim = 16;

enum class ShapeKind { Circle = 0, Square = 1, Triangle = 2 };

const char* shape_name(int shape_id);
const char* color_name(int color_id);
/// RGB in [-1, 1] for each color class.
std::array<double, 3> color_rgb(int color_id);

struct ToySpec {
  int image_size = 24;
  /// Center offset from the canvas middle is uniform in [-position_jitter, position_jitter].
  double position_jitter = 3.0;
  /// Half-extent of the shape is uniform in [size_min, size_max].
  double size_min = 5.0;
  double size_max = 8.0;
  double background = 0.0;

  void validate() const;
};

struct ToySample {
  Tensor<float> image;  // (3, H, W), values in [-1, 1]
  int shape_id = 0;
  int color_id = 0;
  int class_id() const { return shape_id * kColorCount + color_id; }
};

/// Condition vector for a (shape, color) pair: a row of a fixed orthonormal table.
std::vector<double> cond_embed(int shape_id, int color_id);
inline std::vector<double> cond_embed(int class_id) { return cond_embed(class_id / kColorCount, class_id % kColorCount); }
/// Every class condition, class-id order.
std::vector<std::vector<double>> prompt_set();
/// n conditions cycling through the classes: row i is class (i % kClassCount).
std::vector<std::vector<double>> cycled_conditions(std::int64_t n);

/// Anti-aliased render of one shape at an explicit geometry.
Tensor<float> render_shape(const ToySpec& spec, int shape_id, int color_id, double cx, double cy, double half_extent);

/// Deterministic in (spec, n, seed). Classes are balanced: counts differ by at most one.
std::vector<ToySample> generate_dataset(const ToySpec& spec, std::int64_t n, std::uint64_t seed);

/// Stack images into (n, 3, H, W).
template <class T>
Tensor<T> stack_images(const std::vector<ToySample>& samples, std::size_t begin, std::size_t count);

/// Stack condition vectors into (n, cond_dim).
template <class T>
Tensor<T> stack_conds(const std::vector<std::vector<double>>& conds);

}  // namespace tiue
