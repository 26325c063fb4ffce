#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "nlaic/ops.hpp"
#include "nlaic/tensor.hpp"

namespace nlaic {

// Ordered, uniquely named parameter tensors.
template <typename S>
class ParamSet {
 public:
  void add(const std::string& name, Tensor<S> value) {
    if (index_.count(name)) throw ContractError("duplicate parameter name " + name);
    index_.emplace(name, tensors_.size());
    names_.push_back(name);
    tensors_.push_back(std::move(value));
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor<S>& operator[](const std::string& name) { return tensors_[lookup(name)]; }
  const Tensor<S>& operator[](const std::string& name) const { return tensors_[lookup(name)]; }
  Tensor<S>& at(std::size_t i) { return tensors_[i]; }
  const Tensor<S>& at(std::size_t i) const { return tensors_[i]; }
  const std::string& name(std::size_t i) const { return names_[i]; }
  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return tensors_.size(); }

  Index scalar_count() const {
    Index n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
  }

  template <typename T>
  ParamSet<T> cast() const {
    ParamSet<T> out;
    for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], tensors_[i].template cast<T>());
    return out;
  }

  bool operator==(const ParamSet& o) const {
    return names_ == o.names_ && tensors_ == o.tensors_;
  }

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter " + name);
    return it->second;
  }

  std::vector<std::string> names_;
  std::vector<Tensor<S>> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Parameters lifted onto a tape for one forward pass. With no tape, every
// parameter becomes a constant (inference).
template <typename S>
class Binding {
 public:
  using Filter = std::function<bool(const std::string&)>;

  explicit Binding(const ParamSet<S>& params, Tape<S>* tape = nullptr, Filter trainable = {}) {
    vars_.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      const bool grad = tape && (!trainable || trainable(params.name(i)));
      vars_.push_back(grad ? tape->leaf(params.at(i), true) : Var<S>::constant(params.at(i)));
      index_.emplace(params.name(i), i);
    }
    names_ = params.names();
  }

  const Var<S>& operator[](const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unbound parameter " + name);
    return vars_[it->second];
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t size() const { return vars_.size(); }
  const Var<S>& at(std::size_t i) const { return vars_[i]; }
  const std::string& name(std::size_t i) const { return names_[i]; }

 private:
  std::vector<Var<S>> vars_;
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace nlaic
