#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "tabrec/tensor.hpp"

namespace tabrec::attn {

using ParamHandle = std::size_t;

template <typename T>
struct Param {
  std::string name;
  Mat<T> value;
  Mat<T> grad;
};

/// Named, ordered registry of trainable tensors. Handles stay valid for the
/// lifetime of the store.
template <typename T>
class ParamStore {
 public:
  ParamHandle add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter " + name);
    const ParamHandle h = params_.size();
    params_.push_back({name, Mat<T>::Zero(rows, cols), Mat<T>::Zero(rows, cols)});
    index_.emplace(name, h);
    return h;
  }

  Param<T>& operator[](ParamHandle h) { return params_.at(h); }
  const Param<T>& operator[](ParamHandle h) const { return params_.at(h); }

  std::optional<ParamHandle> find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t size() const { return params_.size(); }
  std::size_t count_scalars() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.grad.setZero();
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  /// Copies values into a store of another scalar type with the same layout.
  template <typename U>
  void copy_values_to(ParamStore<U>& other) const {
    if (other.size() != size()) throw std::invalid_argument("parameter layout mismatch");
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (other[i].name != params_[i].name || other[i].value.rows() != params_[i].value.rows() ||
          other[i].value.cols() != params_[i].value.cols())
        throw std::invalid_argument("parameter layout mismatch at " + params_[i].name);
      other[i].value = params_[i].value.template cast<U>();
    }
  }

 private:
  std::vector<Param<T>> params_;
  std::unordered_map<std::string, ParamHandle> index_;
};

}  // namespace tabrec::attn
