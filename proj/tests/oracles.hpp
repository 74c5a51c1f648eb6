// Independent reference implementations used only by tests. These must not
// share code with the production paths they check.
#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "m2m/tensor.hpp"

namespace oracle {

// One contribution group for the naive splat reference: plain doubles, no
// exponent shift, no tape. Loop order: groups in order, sources row-major,
// the 4 footprint neighbors.
struct Group {
  const m2m::diff::Tensor* values;  // {C,H,W} or {H,W}
  const m2m::diff::Tensor* flow;    // {2,H,W} at the target time
  const m2m::diff::Tensor* b;       // {H,W}
  const m2m::diff::Tensor* s;       // {H,W}
  double r;
};

struct SplatResult {
  std::vector<double> values;        // C*H*W fused values; holes = hole_value
  std::vector<std::uint8_t> holes;   // H*W
};

SplatResult naive_splat(const std::vector<Group>& groups, double alpha,
                        double weight_eps, double hole_value);

// Full-sort selection: values descending, ties by lower row-major index.
std::vector<std::pair<int, int>> full_sort_select(
    const m2m::diff::Tensor& error_small, double p);

// Direct per-window SSIM on the luma channel (11x11 Gaussian, sigma 1.5).
double reference_ssim(const m2m::diff::Tensor& a, const m2m::diff::Tensor& b);

// Singular values (descending) of an m x n matrix given by rows, via
// one-sided Jacobi on the rows; high relative accuracy for tiny values.
std::vector<double> singular_values(std::vector<double> a, int m, int n);

// mode-k matricization of a {C,H,W} tensor: rows indexed by the kept axis
std::vector<double> matricize(const m2m::diff::Tensor& t, int mode, int& rows,
                              int& cols);

}  // namespace oracle
