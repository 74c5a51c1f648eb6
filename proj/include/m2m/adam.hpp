#pragma once

#include <cstdint>
#include <vector>

#include "m2m/tensor.hpp"

namespace m2m::diff {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;  // decoupled from the moment estimates
};

// Per-parameter moments, aligned with the parameter list passed to
// adam_step. The step counter is strictly increasing.
struct AdamState {
  std::int64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

// In-place bias-corrected Adam update with decoupled weight decay. Must not
// run while the parameters are recorded on a live tape.
void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads,
               AdamState& state, const AdamConfig& cfg);

}  // namespace m2m::diff
