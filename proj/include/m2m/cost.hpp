#pragma once

#include <cstdint>
#include <vector>

namespace m2m::cost {

// Multiply-accumulate counters split into the stage that runs once per
// frame pair and the stage repeated per interpolated frame, so that
// total(n) = shared + n * unshared holds exactly. Counts are functions of
// operator shapes only, never of data.
class CostLedger {
 public:
  void add_shared(std::uint64_t macs) { shared_ += macs; }

  void begin_frame() { per_frame_.push_back(0); }
  void add_unshared(std::uint64_t macs);

  std::uint64_t shared() const { return shared_; }
  std::uint64_t unshared_total() const;
  const std::vector<std::uint64_t>& per_frame() const { return per_frame_; }
  std::uint64_t total() const { return shared_ + unshared_total(); }

 private:
  std::uint64_t shared_ = 0;
  std::vector<std::uint64_t> per_frame_;
};

// shape-based MAC formulas for the in-scope operators
std::uint64_t macs_scale_flows(int n_flows, int h, int w);
std::uint64_t macs_splat(int n_groups, int channels, int h, int w);
std::uint64_t macs_backward_warp(int channels, int h, int w);
std::uint64_t macs_conv2d_3x3(int cin, int cout, int out_h, int out_w);
std::uint64_t macs_fill_holes(int channels, int h, int w);
std::uint64_t macs_resize(int channels, int out_h, int out_w);
std::uint64_t macs_wmixer(int windows, int q, int channels);
std::uint64_t macs_prn_patch(int patch_side, int image_channels,
                             const std::vector<int>& channels, int window_side);

}  // namespace m2m::cost
