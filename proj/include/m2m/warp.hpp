#pragma once

#include <cstdint>
#include <vector>

#include "m2m/tensor.hpp"

namespace m2m::warp {

using diff::Tensor;

// N sub-flows per direction plus one reliability map per direction.
// Flows are {2,H,W} (dx,dy), reliability maps {H,W} in [0,1].
struct MultiFlowSet {
  std::vector<Tensor> f01;
  std::vector<Tensor> f10;
  Tensor s0;
  Tensor s1;

  int count() const { return static_cast<int>(f01.size()); }
  void validate() const;
};

enum class HolePolicy { mark_only, blend_inputs };

struct FusionConfig {
  Tensor alpha;                  // learnable scalar, default 1.0
  double exponent_clamp = 20.0;  // applied after the per-pixel max shift
  double weight_eps = 1e-12;     // hole threshold on the fused denominator
  HolePolicy hole_policy = HolePolicy::mark_only;

  static FusionConfig defaults();
  void validate() const;
};

struct SplatOutput {
  Tensor frame;               // fused values; holes carry the fill value
  Tensor weight;              // per-pixel accumulated denominator (detached)
  std::vector<std::uint8_t> holes;  // 1 where weight <= weight_eps
  double hole_ratio = 0.0;
};

// One group of contributions: `values` splatted through `flow` with shared
// brightness score, reliability map and temporal weight.
struct SplatGroup {
  Tensor values;  // {C,H,W} or {H,W}
  Tensor flow;    // {2,H,W}, displacement already scaled to the target time
  Tensor b;       // {H,W}, brightness consistency (<= 0 in normal use)
  Tensor s;       // {H,W}, reliability in [0,1]
  double r;       // temporal relevance
};

// Differentiable many-to-many splat of arbitrary contribution groups
// (w.r.t. values, flows, b, s and alpha). Deterministic accumulation order:
// groups in the given order, source pixels row-major, the 4-neighbor
// footprint in a fixed order. Hole pixels get `hole_value`.
SplatOutput splat_groups(const std::vector<SplatGroup>& groups,
                         const FusionConfig& cfg, double hole_value);

// Multiplies direction-0 flows by t and direction-1 flows by 1-t.
MultiFlowSet scale_flows(const MultiFlowSet& flows, double t);

// Unweighted per-pixel mean over the N sub-flows of one direction.
Tensor mean_flow(const std::vector<Tensor>& flows);

// output(i) = bilinear sample of frame at i + flow(i), clamp-to-edge.
Tensor backward_warp(const Tensor& frame, const Tensor& flow);

// b_i = -L1 over channels of the photometric residual against the
// backward-warped other frame; both maps are <= 0.
std::pair<Tensor, Tensor> brightness_consistency(const Tensor& i0,
                                                 const Tensor& i1,
                                                 const Tensor& mean_f01,
                                                 const Tensor& mean_f10);

// 1-t for source frame 0, t for source frame 1.
double temporal_relevance(int source, double t);

// Full two-frame fusion at time t per the weighted-summation rule.
SplatOutput m2m_splat_fuse(const Tensor& i0, const Tensor& i1,
                           const MultiFlowSet& flows_at_t, const Tensor& b0,
                           const Tensor& b1, const FusionConfig& cfg, double t);

// Error-score fusion: one {H,W} map in [0,1] per sub-flow per direction.
// Holes get error 1.0.
SplatOutput splat_error(const std::vector<Tensor>& errors01,
                        const std::vector<Tensor>& errors10,
                        const MultiFlowSet& flows_at_t, const Tensor& b0,
                        const Tensor& b1, const FusionConfig& cfg, double t);

// mark_only returns the fused frame unchanged; blend_inputs writes
// (1-t)*I0 + t*I1 at hole pixels. Differentiable through all frames.
Tensor fill_holes(const SplatOutput& out, const Tensor& i0, const Tensor& i1,
                  double t, HolePolicy policy);

}  // namespace m2m::warp
