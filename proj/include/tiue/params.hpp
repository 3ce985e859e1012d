// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "tiue/autodiff.hpp"

namespace tiue {

/// Named parameter tensors in insertion order. Value semantics: copies are deep.
template <class T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> value;
  };

  void add(std::string name, Tensor<T> value);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor<T>& get(const std::string& name) const;
  Tensor<T>& get(const std::string& name);
  void set(const std::string& name, Tensor<T> value);

  std::size_t size() const noexcept { return entries_.size(); }
  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::vector<Entry>& entries() noexcept { return entries_; }
  std::vector<std::string> names() const;
  std::int64_t total_elements() const;

  /// Combined content hash of every name and buffer.
  std::uint64_t hash() const;
  bool bit_equal(const ParamStore& o) const;

  template <class U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<U>());
    return out;
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

/// How a forward pass obtains parameter tensors as Vars.
///
/// Constant binding serves inference; tape binding registers every parameter
/// as a leaf so gradients can be read back by name.
template <class T>
class ParamBinding {
 public:
  /// Inference: all parameters are constants (views over `store`).
  explicit ParamBinding(const ParamStore<T>& store);
  /// Training: all parameters are tape leaves.
  ParamBinding(const ParamStore<T>& store, Tape<T>& tape);

  virtual ~ParamBinding() = default;
  virtual Var<T> operator()(const std::string& name) const;

  const ParamStore<T>& store() const noexcept { return *store_; }
  /// Gradients in store order (zeros where unreached).
  std::vector<Tensor<T>> gradients(const Gradients<T>& g) const;
  bool tracked() const noexcept { return !leaves_.empty(); }

 private:
  const ParamStore<T>* store_;
  std::map<std::string, Var<T>> leaves_;
};

extern template class ParamStore<float>;
extern template class ParamStore<double>;
extern template class ParamBinding<float>;
extern template class ParamBinding<double>;

}  // namespace tiue
