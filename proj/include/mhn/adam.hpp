#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mhn/errors.hpp"
#include "mhn/params.hpp"

namespace mhn {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam. Moment buffers are allocated lazily per parameter;
// step() consumes and zeroes the gradients it reads.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(ParamStore& params) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto& [name, tensor] : params.entries()) {
      if (!tensor.has_grad())
        throw ContractError("adam: missing gradient for parameter '" + name + "'");
      auto& m = moments_[name];
      if (m.first.size() != tensor.numel()) {
        m.first.assign(tensor.numel(), 0.0);
        m.second.assign(tensor.numel(), 0.0);
      }
      Tensor t = tensor;
      auto& value = t.mutable_value();
      const auto& g = t.grad();
      for (std::size_t i = 0; i < value.size(); ++i) {
        m.first[i] = cfg_.beta1 * m.first[i] + (1.0 - cfg_.beta1) * g[i];
        m.second[i] = cfg_.beta2 * m.second[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double mhat = m.first[i] / bc1;
        const double vhat = m.second[i] / bc2;
        value[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
      t.zero_grad();
    }
  }

  std::size_t step_count() const { return t_; }
  double learning_rate() const { return cfg_.lr; }
  void set_learning_rate(double lr) { cfg_.lr = lr; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::size_t t_ = 0;
  std::unordered_map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments_;
};

}  // namespace mhn
