// SPDX-License-Identifier: Apache-2.0
#include "tiue/random.hpp"

#include <cmath>
#include <numbers>

namespace tiue {

double NoiseKey::normal(std::uint64_t item, std::uint64_t element) const {
  const double u1 = uniform(item, 2 * element);
  const double u2 = uniform(item, 2 * element + 1);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

template <class T>
Tensor<T> normal_tensor(const Shape& shape, const NoiseKey& key, std::uint64_t first_item) {
  Tensor<T> out(shape);
  const std::int64_t items = shape[0];
  const std::int64_t per = out.numel() / items;
  for (std::int64_t b = 0; b < items; ++b)
    for (std::int64_t e = 0; e < per; ++e)
      out[b * per + e] = static_cast<T>(key.normal(first_item + static_cast<std::uint64_t>(b), static_cast<std::uint64_t>(e)));
  return out;
}

std::int64_t CounterRng::below(std::int64_t n) {
  if (n <= 0) fail(ErrorCode::InvalidRange, "CounterRng::below requires n > 0");
  const auto un = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
  std::uint64_t r = next();
  while (r >= limit) r = next();
  return static_cast<std::int64_t>(r % un);
}

template Tensor<float> normal_tensor(const Shape&, const NoiseKey&, std::uint64_t);
template Tensor<double> normal_tensor(const Shape&, const NoiseKey&, std::uint64_t);

}  // namespace tiue
