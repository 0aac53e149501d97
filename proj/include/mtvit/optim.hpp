#pragma once

// SGD with classical momentum and L2 weight decay folded into the gradient:
//   g <- g + wd * p;  v <- mu * v + g;  p <- p - lr * v

#include <cmath>
#include <string>

#include "mtvit/params.hpp"

namespace mtvit {

template <typename T>
struct SgdConfig {
  T lr = T(0.003);
  T momentum = T(0.95);
  T weight_decay = T(1e-5);
};

template <typename T>
class SgdOptimizer {
 public:
  SgdOptimizer(const ParamStore<T>& params, SgdConfig<T> cfg) : cfg_(cfg) {
    for (size_t i = 0; i < params.count(); ++i) {
      const auto& e = params.entry(static_cast<int>(i));
      buffers_.add("optim.momentum." + e.name, e.value.rows, e.value.cols, ParamKind::bias);
    }
    if (!(cfg_.lr > 0) || !(cfg_.momentum >= 0) || !(cfg_.weight_decay >= 0))
      throw ConfigError("optimizer hyperparameters out of range");
  }

  // Consumes params.grad. lr_scale supports schedules; the effective rate is
  // cfg.lr * lr_scale.
  void step(ParamStore<T>& params, T lr_scale = T(1)) {
    const T lr = cfg_.lr * lr_scale;
    for (size_t i = 0; i < params.count(); ++i) {
      auto& e = params.entry(static_cast<int>(i));
      Mat<T>& v = buffers_.value(static_cast<int>(i));
      for (size_t k = 0; k < e.value.size(); ++k) {
        T g = e.grad.data[k];
        if (std::isnan(g))
          throw NumericError("NaN gradient in parameter " + e.name);
        g += cfg_.weight_decay * e.value.data[k];
        v.data[k] = cfg_.momentum * v.data[k] + g;
        e.value.data[k] -= lr * v.data[k];
      }
    }
    ++step_count_;
  }

  long step_count() const { return step_count_; }
  void set_step_count(long n) { step_count_ = n; }
  const SgdConfig<T>& config() const { return cfg_; }
  ParamStore<T>& buffers() { return buffers_; }
  const ParamStore<T>& buffers() const { return buffers_; }

 private:
  SgdConfig<T> cfg_;
  ParamStore<T> buffers_;
  long step_count_ = 0;
};

}  // namespace mtvit
