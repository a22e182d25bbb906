#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mhn/errors.hpp"
#include "mhn/rng.hpp"
#include "mhn/tensor.hpp"

namespace mhn {

// Ordered name -> trainable tensor map. Iteration order is insertion
// order, so the parameter layout is a pure function of the model config.
class ParamStore {
 public:
  Tensor add(const std::string& name, Tensor t) {
    if (!t.requires_grad())
      throw ContractError("parameter '" + name + "' must require gradients");
    if (index_.count(name))
      throw ContractError("duplicate parameter name '" + name + "'");
    index_[name] = entries_.size();
    entries_.emplace_back(name, t);
    return t;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const Tensor& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
    return entries_[it->second].second;
  }

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }

  std::size_t size() const { return entries_.size(); }

  std::size_t total_params() const {
    std::size_t n = 0;
    for (const auto& [name, t] : entries_) n += t.numel();
    return n;
  }

  std::size_t count_with_prefix(const std::string& prefix) const {
    std::size_t n = 0;
    for (const auto& [name, t] : entries_)
      if (name.rfind(prefix, 0) == 0) n += t.numel();
    return n;
  }

  void zero_grads() {
    for (auto& [name, t] : entries_) t.zero_grad();
  }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Glorot-uniform init for weight matrices.
inline Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> data(fan_in * fan_out);
  for (double& v : data) v = rng.uniform(-limit, limit);
  return Tensor::from({fan_in, fan_out}, std::move(data), true);
}

inline Tensor normal_param(Shape shape, double stddev, Rng& rng) {
  std::vector<double> data(detail::numel_of(shape));
  for (double& v : data) v = rng.normal(0.0, stddev);
  return Tensor::from(std::move(shape), std::move(data), true);
}

inline Tensor zeros_param(Shape shape) { return Tensor::zeros(std::move(shape), true); }

inline Tensor ones_param(Shape shape) { return Tensor::full(std::move(shape), 1.0, true); }

struct LinearParams {
  Tensor w;  // [in, out]
  Tensor b;  // [out]
};

struct LayerNormParams {
  Tensor gamma;
  Tensor beta;
};

inline Tensor linear(const Tensor& x, const LinearParams& p) {
  return add_rowwise(matmul(x, p.w), p.b);
}

inline Tensor apply_layer_norm(const Tensor& x, const LayerNormParams& p) {
  return layer_norm(x, p.gamma, p.beta);
}

}  // namespace mhn
