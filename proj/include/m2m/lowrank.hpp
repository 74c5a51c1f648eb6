#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "m2m/params.hpp"
#include "m2m/tensor.hpp"

namespace m2m::lowrank {

using diff::ParamPack;
using diff::Tensor;

// One per-dimension projector: pool the other two axes to a vector, then two
// linear stages with GELU between and a sigmoid head.
struct Projector {
  Tensor w1;  // {hidden, len}
  Tensor b1;  // {hidden}
  Tensor w2;  // {len, hidden}
  Tensor b2;  // {len}
};

// M projectors for each of the channel / height / width dimensions.
struct ProjectorSet {
  int m = 0;
  int c = 0, h = 0, w = 0;
  std::vector<Projector> channel;
  std::vector<Projector> height;
  std::vector<Projector> width;

  static ProjectorSet make(int m, int c, int h, int w, std::mt19937_64& rng);

  std::vector<Tensor> trainable() const;
  void register_into(ParamPack& pack, const std::string& prefix) const;
};

// Shrinks X {C,H,W} into three groups of M sigmoid-bounded vectors:
// U {M,C}, V {M,H}, W {M,W}.
struct Projections {
  Tensor u, v, w;
};
Projections project_dims(const Tensor& x, const ProjectorSet& p);

// T = (1/M) sum_m u_m (x) v_m (x) w_m, every entry in (0,1) for
// sigmoid-bounded inputs; numerical CP-rank of any matricization <= M.
Tensor rank1_compose(const Tensor& u, const Tensor& v, const Tensor& w);

// Elementwise product, differentiable through both factors.
Tensor modulate(const Tensor& x, const Tensor& t);

// The full block: project, compose, modulate.
Tensor low_rank_modulate(const Tensor& x, const ProjectorSet& p);

}  // namespace m2m::lowrank
