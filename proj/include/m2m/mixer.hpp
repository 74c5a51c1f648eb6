#pragma once

#include <random>
#include <string>
#include <vector>

#include "m2m/params.hpp"
#include "m2m/tensor.hpp"
#include "m2m/warp.hpp"

namespace m2m::mixer {

using diff::ParamPack;
using diff::Tensor;

// Square windows of side window_side (area Q), optional cyclic shift of
// window_side/2 pixels. window_side must divide the patch side.
struct WindowSpec {
  int window_side = 8;
  int shift = 0;

  int area() const { return window_side * window_side; }
  void validate(int patch_side) const;
};

// Token-mix weights {M,Q} / {Q,M}, channel-mix weights {C,D} / {D,C}, and
// one layernorm parameter set per mixing stage.
struct WMixerParams {
  Tensor tok_w1, tok_w2;
  Tensor tok_gamma, tok_beta;
  Tensor ch_w1, ch_w2;
  Tensor ch_gamma, ch_beta;

  static WMixerParams make(int q, int channels, std::mt19937_64& rng);
  static WMixerParams zeros(int q, int channels);
  std::vector<Tensor> trainable() const;
  void register_into(ParamPack& pack, const std::string& prefix) const;
};

// Splits {C,K,K} into K^2/Q window tables {Q,C}; merge is the bitwise
// inverse. With shift != 0 a cyclic roll happens before partition and is
// undone after merge.
std::vector<Tensor> window_partition(const Tensor& x, const WindowSpec& spec);
Tensor window_merge(const std::vector<Tensor>& windows, const WindowSpec& spec,
                    int channels, int patch_side);

// U = X + W2 . gelu(W1 . LayerNorm(X)) over the spatial (token) dimension.
Tensor token_mix(const Tensor& x, const WMixerParams& p);
// Y = U + gelu(LayerNorm(U) . W1) . W2 over the channel dimension.
Tensor channel_mix(const Tensor& u, const WMixerParams& p);

// partition -> token_mix -> channel_mix per window -> merge.
Tensor w_mixer_block(const Tensor& x, const WindowSpec& spec,
                     const WMixerParams& p);

// Swin-Mixer Block: conv fusion of (X, context) followed by two W-Mixer
// blocks, the second on shifted windows.
struct SMBParams {
  Tensor conv_w, conv_b;  // 3x3, maps (x_channels + ctx_channels) -> out
  WMixerParams mix1, mix2;
  WindowSpec win;

  static SMBParams make(int in_channels, int ctx_channels, int out_channels,
                        int window_side, std::mt19937_64& rng);
  std::vector<Tensor> trainable() const;
  void register_into(ParamPack& pack, const std::string& prefix) const;
};

Tensor smb_forward(const Tensor& x, const Tensor& context, const SMBParams& p);

// Four-level feature pyramid; level 0 is the image itself.
struct FeaturePyramid {
  std::vector<Tensor> levels;
};

struct PRNConfig {
  int levels = 4;
  std::vector<int> channels = {16, 32, 64, 128};  // per-level working width
  int window_side = 8;
  int patch_side = 32;

  static PRNConfig toy(int patch_side);
  void validate() const;
  // context pyramid channel count at a level (level 0 = image channels)
  int context_channels(int level, int image_channels) const;
  WindowSpec window_at(int level, bool shifted) const;
};

// Stride-2 3x3 conv encoder for levels 1..3; level 0 is the input frame.
struct ContextEncoderParams {
  std::vector<Tensor> w, b;

  static ContextEncoderParams make(const PRNConfig& cfg, int image_channels,
                                   std::mt19937_64& rng);
  std::vector<Tensor> trainable() const;
  void register_into(ParamPack& pack, const std::string& prefix) const;
};

FeaturePyramid build_context_pyramid(const Tensor& image,
                                     const ContextEncoderParams& p);

// Warps both pyramids to time t with per-level many-to-many splatting, each
// direction separately. Flows are full-resolution and unscaled; they are
// bilinearly resized per level with vectors scaled by 1/2^l.
std::pair<FeaturePyramid, FeaturePyramid> splat_pyramid(
    const FeaturePyramid& pyr0, const FeaturePyramid& pyr1,
    const warp::MultiFlowSet& flows, double t, const warp::FusionConfig& cfg);

// Encoder-decoder over SMBs with a zero-initialized residual head; the
// untrained network is an exact no-op on the initial patch.
struct PRNParams {
  PRNConfig cfg;
  std::vector<SMBParams> enc;         // one per level
  std::vector<Tensor> down_w, down_b; // stride-2 convs between levels
  std::vector<SMBParams> dec;         // levels-1 .. 0
  std::vector<Tensor> up_w, up_b;     // conv after nearest upsample
  Tensor head_w, head_b;              // zero-initialized

  static PRNParams make(const PRNConfig& cfg, int image_channels,
                        std::mt19937_64& rng);
  std::vector<Tensor> trainable() const;
  void register_into(ParamPack& pack, const std::string& prefix) const;
};

// patch pyramids are crops of the two warped full-frame pyramids at aligned
// coordinates (level-l offset = level-0 offset / 2^l).
Tensor prn_refine_patch(const FeaturePyramid& patch_t0,
                        const FeaturePyramid& patch_t1, const Tensor& initial,
                        const PRNParams& params);

// Bilinear resize helper shared by flow/pyramid plumbing.
Tensor resize_bilinear(const Tensor& src, int out_h, int out_w);

}  // namespace m2m::mixer
