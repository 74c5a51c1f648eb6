#include "m2m/cost.hpp"

#include <stdexcept>

namespace m2m::cost {

void CostLedger::add_unshared(std::uint64_t macs) {
  if (per_frame_.empty())
    throw std::logic_error("CostLedger: begin_frame() before add_unshared()");
  per_frame_.back() += macs;
}

std::uint64_t CostLedger::unshared_total() const {
  std::uint64_t acc = 0;
  for (std::uint64_t v : per_frame_) acc += v;
  return acc;
}

std::uint64_t macs_scale_flows(int n_flows, int h, int w) {
  return 2ull * n_flows * 2ull * h * w;
}

std::uint64_t macs_splat(int n_groups, int channels, int h, int w) {
  // per contribution: exponent product, 4 footprint taps, value and weight
  // accumulation per channel
  return static_cast<std::uint64_t>(n_groups) * h * w * 4ull * (channels + 4ull);
}

std::uint64_t macs_backward_warp(int channels, int h, int w) {
  return static_cast<std::uint64_t>(channels) * h * w * 8ull;
}

std::uint64_t macs_conv2d_3x3(int cin, int cout, int out_h, int out_w) {
  return static_cast<std::uint64_t>(cout) * out_h * out_w * cin * 9ull;
}

std::uint64_t macs_fill_holes(int channels, int h, int w) {
  return static_cast<std::uint64_t>(channels) * h * w * 2ull;
}

std::uint64_t macs_resize(int channels, int out_h, int out_w) {
  return static_cast<std::uint64_t>(channels) * out_h * out_w * 8ull;
}

std::uint64_t macs_wmixer(int windows, int q, int channels) {
  std::uint64_t m = static_cast<std::uint64_t>(q > 1 ? q / 2 : 1);
  std::uint64_t d = 2ull * channels;
  std::uint64_t token = 2ull * m * q * channels;
  std::uint64_t channel = 2ull * q * channels * d;
  return static_cast<std::uint64_t>(windows) * (token + channel);
}

std::uint64_t macs_prn_patch(int patch_side, int image_channels,
                             const std::vector<int>& channels,
                             int window_side) {
  // nominal full-size patch cost: encoder + decoder SMBs, the down/up convs
  // and the residual head
  std::uint64_t total = 0;
  const int levels = static_cast<int>(channels.size());
  for (int l = 0; l < levels; ++l) {
    int side = patch_side >> l;
    int ws = window_side < side ? window_side : side;
    while (side % ws != 0) --ws;
    int windows = (side / ws) * (side / ws);
    int q = ws * ws;
    int in = l == 0 ? image_channels : channels[l];
    int ctx = 2 * (l == 0 ? image_channels : channels[l]);
    // encoder SMB conv + two mixers
    total += macs_conv2d_3x3(in + ctx, channels[l], side, side);
    total += 2ull * macs_wmixer(windows, q, channels[l]);
    if (l > 0)
      total += macs_conv2d_3x3(channels[l - 1], channels[l], side, side);
    if (l < levels - 1) {
      // decoder at this level: upsample conv + SMB over concatenated input
      total += macs_conv2d_3x3(channels[l + 1], channels[l], side, side);
      total += macs_conv2d_3x3(2 * channels[l] + ctx, channels[l], side, side);
      total += 2ull * macs_wmixer(windows, q, channels[l]);
    }
  }
  total += macs_conv2d_3x3(channels[0], image_channels, patch_side, patch_side);
  return total;
}

}  // namespace m2m::cost
