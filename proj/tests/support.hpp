// SPDX-License-Identifier: Apache-2.0
// Shared helpers for the unit and acceptance suites: random inputs, finite-difference
// gradient checks, and small reference implementations written independently of src/.
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tiue/autodiff.hpp"
#include "tiue/schedule.hpp"
#include "tiue/unet.hpp"

/// Expect `expr` to throw tiue::Error carrying `ecode`.
#define TIUE_CHECK_CODE(expr, ecode)        \
  do {                                      \
    try {                                   \
      (void)(expr);                         \
      FAIL("expected " #ecode);             \
    } catch (const ::tiue::Error& err_) {   \
      CHECK(err_.code() == (ecode));        \
    }                                       \
  } while (0)

namespace tiue::testing {

/// A UNet small enough for exhaustive gradient checks.
UNetConfig tiny_config();
/// The configuration the end-to-end runs use.
UNetConfig small_config();

template <class T>
Tensor<T> random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0);

/// f maps inputs to any tensor; the check contracts it with fixed random weights.
template <class T>
using GraphFn = std::function<Var<T>(std::span<const Var<T>>)>;

struct GradReport {
  double max_rel_err = 0.0;  // worst over inputs of ||analytic - numeric|| / max(||analytic||, ||numeric||)
  std::string worst_input;
};

/// Central differences on every element of every input.
template <class T>
GradReport finite_difference_check(const GraphFn<T>& f, const std::vector<Tensor<T>>& inputs, double h, std::uint64_t seed);

struct PrimitiveCase {
  PrimitiveKind kind;
  std::vector<Shape> shapes;
  PrimitiveAttrs attrs;
  double lo = -1.0, hi = 1.0;  // input range
};

/// One case per primitive (two for conv2d: with and without padding).
std::vector<PrimitiveCase> primitive_cases();

template <class T>
GradReport primitive_gradient_check(const PrimitiveCase& c, std::uint64_t seed);

/// Gradient of sum(R * z0) through encode -> K decodes -> closed-form combination,
/// checked against central differences along random parameter directions and on
/// sampled coordinates.
template <class T>
GradReport student_graph_check(std::uint64_t seed, std::int64_t k, int directions, int coordinates);

/// Plain sequential DDIM in long double, written from the update rule directly.
std::vector<long double> reference_ddim_chain(const std::vector<long double>& noise, const std::vector<std::vector<long double>>& preds,
                                              const std::vector<double>& alpha_bars_in_order, double alpha_bar_terminal);

/// Brute-force manifold metrics: plain double loops with explicit sorting.
struct BruteMetrics {
  double precision, recall, density, coverage;
};
BruteMetrics brute_force_metrics(const std::vector<std::vector<double>>& real, const std::vector<std::vector<double>>& fake, int k);

}  // namespace tiue::testing
