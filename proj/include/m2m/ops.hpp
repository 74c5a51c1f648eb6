#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "m2m/tensor.hpp"

namespace m2m::diff {

// Every op validates input shapes, checks the output for NaN/Inf, and
// registers a vector-Jacobian backward on the active tape when any input
// requires a gradient. Images and flows use channel-first layout:
// frames {C,H,W}, flow fields {2,H,W} (channel 0 = dx, 1 = dy), maps {H,W}.

// elementwise
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double c);
Tensor add_scalar(const Tensor& x, double c);
Tensor abs_val(const Tensor& x);   // subgradient 0 at the kink
Tensor sqrt_val(const Tensor& x);  // requires x > 0
Tensor exp_val(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor gelu(const Tensor& x);  // exact erf formulation
Tensor clamp01(const Tensor& x);

// reductions
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// linear algebra / network blocks
Tensor matmul(const Tensor& a, const Tensor& b);  // {m,k} x {k,n}
// Normalizes over the last axis; gamma/beta have that axis' extent.
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 double eps = 1e-5);
// 3x3 kernel, zero padding 1, stride 1 or 2. x {Cin,H,W}, w {Cout,Cin,3,3},
// bias {Cout}.
Tensor conv2d_3x3(const Tensor& x, const Tensor& w, const Tensor& bias,
                  int stride);
// src {C,H,W}, coords {2,Ho,Wo} absolute source positions (x then y),
// clamp-to-edge. Integer coordinates reproduce the source value bitwise.
Tensor bilinear_sample(const Tensor& src, const Tensor& coords);
// k x k blocks with stride k; ragged edges pool the available pixels.
Tensor maxpool2d(const Tensor& x, int k);
Tensor global_avgpool(const Tensor& x);  // {C,H,W} -> {C}
// Mean over the two axes other than keep_axis: {C,H,W} -> {extent of kept}.
Tensor pool_mean_keep(const Tensor& x, int keep_axis);

// structural (pure index moves, bitwise-exact round trips)
Tensor gather(const Tensor& x, const std::vector<std::int64_t>& index,
              Shape out_shape);
Tensor scatter_sum(const Tensor& x, const std::vector<std::int64_t>& index,
                   Shape out_shape);
Tensor reshape(const Tensor& x, Shape new_shape);
Tensor concat_channels(const std::vector<Tensor>& parts);  // along axis 0
Tensor stack_rows(const std::vector<Tensor>& rows);        // M x {L} -> {M,L}
Tensor upsample_nearest2(const Tensor& x);  // {C,H,W} -> {C,2H,2W}
// out[y][x] = in[(y-dy) mod H][(x-dx) mod W] on the spatial axes
Tensor roll2d(const Tensor& x, int dy, int dx);

// name-based dispatch over the primitive set (CLI gradcheck, tests)
enum class Primitive {
  matmul,
  conv2d_3x3,
  layernorm,
  gelu,
  sigmoid,
  exp,
  add,
  mul,
  bilinear_sample,
  maxpool2d,
  global_avgpool,
};
Primitive primitive_from_string(std::string_view name);
const char* primitive_name(Primitive kind);
Tensor apply_primitive(Primitive kind, const std::vector<Tensor>& inputs);

}  // namespace m2m::diff
