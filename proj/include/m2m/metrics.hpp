#pragma once

#include "m2m/tensor.hpp"

namespace m2m::metrics {

using diff::Tensor;

// 10*log10(peak^2 / MSE) over all channels; identical frames report the
// 99 dB cap instead of infinity.
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0);

// Mean local SSIM on the luma channel (0.299R + 0.587G + 0.114B), 11x11
// Gaussian window with sigma 1.5, K1=0.01, K2=0.03, valid-region windows
// only. Frames must be at least 11x11.
double ssim(const Tensor& a, const Tensor& b);

}  // namespace m2m::metrics
