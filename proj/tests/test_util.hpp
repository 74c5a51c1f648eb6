#pragma once

#include <cstring>
#include <random>

#include "m2m/tensor.hpp"

namespace testutil {

inline m2m::diff::Tensor rand_tensor(m2m::diff::Shape shape, double lo,
                                     double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(
      static_cast<std::size_t>(m2m::diff::shape_numel(shape)));
  for (double& x : v) x = dist(rng);
  return m2m::diff::Tensor::from_data(std::move(shape), std::move(v));
}

inline bool bits_equal(const m2m::diff::Tensor& a, const m2m::diff::Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(),
                     a.data().size() * sizeof(double)) == 0;
}

inline double max_abs_diff(const m2m::diff::Tensor& a,
                           const m2m::diff::Tensor& b) {
  double worst = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i)
    worst = std::max(worst, std::fabs(a.data()[i] - b.data()[i]));
  return worst;
}

}  // namespace testutil
