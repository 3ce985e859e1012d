// SPDX-License-Identifier: Apache-2.0
#include "tiue/params.hpp"

namespace tiue {

template <class T>
void ParamStore<T>::add(std::string name, Tensor<T> value) {
  if (contains(name)) fail(ErrorCode::InvalidAttr, "duplicate parameter " + name);
  index_.emplace(name, entries_.size());
  entries_.push_back(Entry{std::move(name), std::move(value)});
}

template <class T>
const Tensor<T>& ParamStore<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) fail(ErrorCode::TargetMissing, "no parameter named " + name);
  return entries_[it->second].value;
}

template <class T>
Tensor<T>& ParamStore<T>::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) fail(ErrorCode::TargetMissing, "no parameter named " + name);
  return entries_[it->second].value;
}

template <class T>
void ParamStore<T>::set(const std::string& name, Tensor<T> value) {
  auto& dst = get(name);
  check_same_shape(dst, value, name.c_str());
  dst = std::move(value);
}

template <class T>
std::vector<std::string> ParamStore<T>::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.name);
  return out;
}

template <class T>
std::int64_t ParamStore<T>::total_elements() const {
  std::int64_t n = 0;
  for (const auto& e : entries_) n += e.value.numel();
  return n;
}

template <class T>
std::uint64_t ParamStore<T>::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& e : entries_) {
    for (char c : e.name) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ULL;
    h = (h ^ content_hash(e.value)) * 1099511628211ULL;
  }
  return h;
}

template <class T>
bool ParamStore<T>::bit_equal(const ParamStore& o) const {
  if (entries_.size() != o.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].name != o.entries_[i].name || !entries_[i].value.bit_equal(o.entries_[i].value)) return false;
  return true;
}

template <class T>
ParamBinding<T>::ParamBinding(const ParamStore<T>& store) : store_(&store) {}

template <class T>
ParamBinding<T>::ParamBinding(const ParamStore<T>& store, Tape<T>& tape) : store_(&store) {
  for (const auto& e : store.entries()) leaves_.emplace(e.name, tape.leaf(e.value));
}

template <class T>
Var<T> ParamBinding<T>::operator()(const std::string& name) const {
  if (!leaves_.empty()) {
    auto it = leaves_.find(name);
    if (it == leaves_.end()) fail(ErrorCode::TargetMissing, "no parameter named " + name);
    return it->second;
  }
  return Var<T>::view(store_->get(name));
}

template <class T>
std::vector<Tensor<T>> ParamBinding<T>::gradients(const Gradients<T>& g) const {
  std::vector<Tensor<T>> out;
  out.reserve(store_->size());
  for (const auto& e : store_->entries()) {
    auto it = leaves_.find(e.name);
    out.push_back(it == leaves_.end() ? Tensor<T>(e.value.shape()) : g.of(it->second));
  }
  return out;
}

template class ParamStore<float>;
template class ParamStore<double>;
template class ParamBinding<float>;
template class ParamBinding<double>;

}  // namespace tiue
