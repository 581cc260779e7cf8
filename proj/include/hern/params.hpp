#pragma once

#include <map>
#include <string>

#include "hern/tensor.hpp"

namespace hern {

/// Named tensors keyed by hierarchical dotted paths such as
/// "global.group0.block1.conv2.w". Iteration order is the lexicographic
/// order of the paths.
template <typename T>
class ParamStore {
 public:
  using Map = std::map<std::string, Tensor<T>>;

  Tensor<T>& add(const std::string& name, Tensor<T> value) {
    auto [it, inserted] = tensors_.emplace(name, std::move(value));
    if (!inserted) throw ShapeError("duplicate parameter '" + name + "'");
    return it->second;
  }

  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }

  const Tensor<T>& at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ShapeError("missing parameter '" + name + "'");
    return it->second;
  }
  Tensor<T>& at(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ShapeError("missing parameter '" + name + "'");
    return it->second;
  }

  std::size_t size() const { return tensors_.size(); }
  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : tensors_) n += t.size();
    return n;
  }

  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

  /// Same names and shapes, every element zero.
  ParamStore zeros_like() const {
    ParamStore out;
    for (const auto& [name, t] : tensors_) out.add(name, Tensor<T>(t.shape()));
    return out;
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [name, t] : tensors_) out.add(name, t.template cast<U>());
    return out;
  }

  bool operator==(const ParamStore&) const = default;

 private:
  Map tensors_;
};

template <typename T>
using ModelParams = ParamStore<T>;

template <typename T>
using ParamGrads = ParamStore<T>;

}  // namespace hern
