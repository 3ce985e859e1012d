// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tiue/tensor.hpp"

namespace tiue {

template <class T>
class Tape;

/// Handle to a tensor value, optionally tracked by a Tape.
///
/// A Var without a tape (or with node() < 0) is a constant: operations on
/// constants compute forward values only. Views borrow a tensor owned
/// elsewhere; the owner must outlive every Var and Tape that refers to it.
template <class T>
class Var {
 public:
  Var() = default;

  static Var constant(Tensor<T> t) { return Var(std::make_shared<const Tensor<T>>(std::move(t))); }
  static Var view(const Tensor<T>& t) { return Var(std::shared_ptr<const Tensor<T>>(std::shared_ptr<void>{}, &t)); }

  const Tensor<T>& value() const { return *value_; }
  const Shape& shape() const { return value_->shape(); }
  std::int64_t dim(std::size_t i) const { return value_->dim(i); }
  std::int64_t numel() const { return value_->numel(); }
  bool defined() const noexcept { return static_cast<bool>(value_); }
  bool requires_grad() const noexcept { return tape_ != nullptr && node_ >= 0; }
  Tape<T>* tape() const noexcept { return tape_; }
  int node() const noexcept { return node_; }

  /// Same value, detached from the tape.
  Var detached() const { return Var(value_); }

 private:
  explicit Var(std::shared_ptr<const Tensor<T>> v) : value_(std::move(v)) {}
  Var(std::shared_ptr<const Tensor<T>> v, Tape<T>* tape, int node) : value_(std::move(v)), tape_(tape), node_(node) {}

  std::shared_ptr<const Tensor<T>> value_;
  Tape<T>* tape_ = nullptr;
  int node_ = -1;

  friend class Tape<T>;
};

/// Reverse-mode gradients for every node reached from the loss.
template <class T>
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(std::vector<Tensor<T>> by_node, std::vector<Shape> shapes)
      : grads_(std::move(by_node)), shapes_(std::move(shapes)) {}

  /// Gradient of the loss w.r.t. `v`; zeros when v was unreachable or constant.
  Tensor<T> of(const Var<T>& v) const;
  bool reached(const Var<T>& v) const;

 private:
  std::vector<Tensor<T>> grads_;
  std::vector<Shape> shapes_;
};

/// Linear record of operations for one forward pass. Single-threaded.
template <class T>
class Tape {
 public:
  /// gin[i] is null when input i needs no gradient; otherwise accumulate into it.
  using BackwardFn = std::function<void(const Tensor<T>& gout, std::span<Tensor<T>* const> gin)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Gradient-tracked leaf borrowing `t`.
  Var<T> leaf(const Tensor<T>& t);
  /// Gradient-tracked leaf owning `t`.
  Var<T> leaf_owned(Tensor<T> t);

  /// Record an op output. Returns a constant when no input requires grad.
  Var<T> record(const char* kind, Tensor<T> out, std::vector<Var<T>> inputs, BackwardFn fn);

  Gradients<T> backward(const Var<T>& loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  const char* kind(std::size_t i) const { return nodes_.at(i).kind; }
  const std::vector<int>& inputs(std::size_t i) const { return nodes_.at(i).inputs; }
  const Tensor<T>& value(std::size_t i) const { return *nodes_.at(i).value; }

 private:
  struct Node {
    const char* kind;
    std::shared_ptr<const Tensor<T>> value;
    std::vector<int> inputs;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

/// Tape shared by all inputs, or null when every input is a constant.
template <class T>
Tape<T>* common_tape(std::span<const Var<T>> vars);

namespace ops {

template <class T> Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int padding);
template <class T> Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b);
template <class T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> group_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, int groups, double eps = 1e-5);
template <class T> Var<T> silu(const Var<T>& x);
template <class T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> mul_scalar(const Var<T>& x, double s);
template <class T> Var<T> add_scalar(const Var<T>& x, double s);
template <class T> Var<T> square(const Var<T>& x);
template <class T> Var<T> log(const Var<T>& x);
template <class T> Var<T> clamp_min(const Var<T>& x, double lo);
template <class T> Var<T> concat_channels(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> avg_pool2(const Var<T>& x);
template <class T> Var<T> upsample_nearest2(const Var<T>& x);
template <class T> Var<T> sum(const Var<T>& x);
template <class T> Var<T> mean(const Var<T>& x);
template <class T> Var<T> reshape(const Var<T>& x, Shape shape);
/// x * (1 + scale) + shift with scale/shift = ss[:, :C], ss[:, C:] broadcast over H, W.
template <class T> Var<T> film(const Var<T>& x, const Var<T>& ss);
/// Per-batch-row mean over every non-leading axis: (B, ...) -> (B).
template <class T> Var<T> row_mean(const Var<T>& x);
/// Per-batch-row population variance: (B, ...) -> (B).
template <class T> Var<T> row_var(const Var<T>& x);

}  // namespace ops

enum class PrimitiveKind {
  Conv2d,
  Linear,
  Matmul,
  GroupNorm,
  Silu,
  Add,
  Sub,
  Mul,
  MulScalar,
  AddScalar,
  Square,
  Log,
  ClampMin,
  ConcatChannels,
  AvgPool2,
  UpsampleNearest2,
  Sum,
  Mean,
  Reshape,
  Film,
  RowMean,
  RowVar,
};

struct PrimitiveAttrs {
  int padding = 0;
  int groups = 1;
  double eps = 1e-5;
  double scalar = 0.0;
  Shape shape;
};

/// Uniform dispatch over every primitive; used by the gradient-check suites.
template <class T>
Var<T> forward_primitive(PrimitiveKind kind, std::span<const Var<T>> inputs, const PrimitiveAttrs& attrs = {});

const char* primitive_name(PrimitiveKind kind);

}  // namespace tiue
