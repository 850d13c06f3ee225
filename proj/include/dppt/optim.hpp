#pragma once

#include <span>
#include <vector>

#include "dppt/tensor.hpp"

namespace dppt {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  long step = 0;
};

// Bias-corrected Adam update. Returns false, leaving params and state untouched,
// when any gradient entry is non-finite.
[[nodiscard]] bool adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state,
                             const AdamConfig& config = {});

}  // namespace dppt
