// SPDX-License-Identifier: Apache-2.0
#include "tiue/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace tiue {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::InvalidAttr: return "InvalidAttr";
    case ErrorCode::NotScalar: return "NotScalar";
    case ErrorCode::DecayOutOfRange: return "DecayOutOfRange";
    case ErrorCode::InvalidRange: return "InvalidRange";
    case ErrorCode::InvalidTimestep: return "InvalidTimestep";
    case ErrorCode::InvalidK: return "InvalidK";
    case ErrorCode::CacheMismatch: return "CacheMismatch";
    case ErrorCode::InvalidSteps: return "InvalidSteps";
    case ErrorCode::InvalidPlan: return "InvalidPlan";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::TargetMissing: return "TargetMissing";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::DegenerateVariance: return "DegenerateVariance";
    case ErrorCode::CheckpointInvalid: return "CheckpointInvalid";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::UnknownClass: return "UnknownClass";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::KTooLarge: return "KTooLarge";
    case ErrorCode::Corrupt: return "Corrupt";
    case ErrorCode::VersionUnsupported: return "VersionUnsupported";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

static void validate_shape(const Shape& shape) {
  if (shape.empty()) fail(ErrorCode::ShapeMismatch, "tensor rank must be >= 1");
  for (auto e : shape)
    if (e <= 0) fail(ErrorCode::ShapeMismatch, "non-positive extent in " + shape_str(shape));
}

template <class T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_.assign(static_cast<std::size_t>(shape_numel(shape_)), fill);
}

template <class T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  validate_shape(shape_);
  if (shape_numel(shape_) != static_cast<std::int64_t>(data_.size()))
    fail(ErrorCode::ShapeMismatch, "buffer length " + std::to_string(data_.size()) + " does not match " + shape_str(shape_));
}

template <class T>
T Tensor<T>::item() const {
  if (data_.size() != 1) fail(ErrorCode::NotScalar, "item() on " + shape_str(shape_));
  return data_[0];
}

template <class T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  return Tensor(std::move(shape), data_);
}

template <class T>
void Tensor<T>::fill(T v) {
  std::fill(data_.begin(), data_.end(), v);
}

template <class T>
bool Tensor<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template <class T>
bool Tensor<T>::bit_equal(const Tensor& o) const {
  return shape_ == o.shape_ && std::memcmp(data_.data(), o.data_.data(), data_.size() * sizeof(T)) == 0;
}

template <class T>
std::uint64_t content_hash(const Tensor<T>& t) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  mix(t.shape().data(), t.shape().size() * sizeof(std::int64_t));
  mix(t.data(), static_cast<std::size_t>(t.numel()) * sizeof(T));
  return h;
}

template class Tensor<float>;
template class Tensor<double>;
template std::uint64_t content_hash(const Tensor<float>&);
template std::uint64_t content_hash(const Tensor<double>&);

}  // namespace tiue
