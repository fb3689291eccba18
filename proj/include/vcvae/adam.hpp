#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vcvae/tensor.hpp"

namespace vcvae {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;
};

// One bias-corrected Adam descent step on `params` using loss gradients
// `grads` (same order and shapes). Moments are created on first use.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads,
               AdamState& state, const AdamConfig& cfg);

}  // namespace vcvae
