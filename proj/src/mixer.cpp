#include "m2m/mixer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "m2m/ops.hpp"

namespace m2m::mixer {

using diff::Shape;
using diff::Tape;

namespace {

Tensor init_weight(Shape shape, double fan_in, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  double bound = 1.0 / std::sqrt(fan_in);
  std::vector<double> w(static_cast<std::size_t>(diff::shape_numel(shape)));
  for (double& v : w) v = bound * dist(rng);
  return Tensor::from_data(std::move(shape), std::move(w), true);
}

std::vector<std::int64_t> window_index(int channels, int patch_side,
                                       int window_side, int wr, int wc) {
  std::vector<std::int64_t> idx;
  idx.reserve(static_cast<std::size_t>(window_side) * window_side * channels);
  const std::int64_t plane =
      static_cast<std::int64_t>(patch_side) * patch_side;
  for (int qy = 0; qy < window_side; ++qy)
    for (int qx = 0; qx < window_side; ++qx)
      for (int c = 0; c < channels; ++c)
        idx.push_back(c * plane +
                      static_cast<std::int64_t>(wr * window_side + qy) *
                          patch_side +
                      (wc * window_side + qx));
  return idx;
}

}  // namespace

void WindowSpec::validate(int patch_side) const {
  if (window_side < 1) throw std::invalid_argument("window side must be >= 1");
  if (patch_side % window_side != 0)
    throw std::invalid_argument("window side must divide the patch side");
  if (shift != 0) {
    if (window_side % 2 != 0)
      throw std::invalid_argument("shifted windows need an even window side");
    if (shift != window_side / 2)
      throw std::invalid_argument("shift must be window_side/2");
  }
}

WMixerParams WMixerParams::make(int q, int channels, std::mt19937_64& rng) {
  WMixerParams p;
  int m = std::max(q / 2, 1);
  int d = 2 * channels;
  p.tok_w1 = init_weight({m, q}, q, rng);
  p.tok_w2 = init_weight({q, m}, m, rng);
  p.ch_w1 = init_weight({channels, d}, channels, rng);
  p.ch_w2 = init_weight({d, channels}, d, rng);
  p.tok_gamma = Tensor::full({channels}, 1.0, true);
  p.tok_beta = Tensor::zeros({channels}, true);
  p.ch_gamma = Tensor::full({channels}, 1.0, true);
  p.ch_beta = Tensor::zeros({channels}, true);
  return p;
}

WMixerParams WMixerParams::zeros(int q, int channels) {
  WMixerParams p;
  int m = std::max(q / 2, 1);
  int d = 2 * channels;
  p.tok_w1 = Tensor::zeros({m, q}, true);
  p.tok_w2 = Tensor::zeros({q, m}, true);
  p.ch_w1 = Tensor::zeros({channels, d}, true);
  p.ch_w2 = Tensor::zeros({d, channels}, true);
  p.tok_gamma = Tensor::full({channels}, 1.0, true);
  p.tok_beta = Tensor::zeros({channels}, true);
  p.ch_gamma = Tensor::full({channels}, 1.0, true);
  p.ch_beta = Tensor::zeros({channels}, true);
  return p;
}

std::vector<Tensor> WMixerParams::trainable() const {
  return {tok_w1, tok_w2, tok_gamma, tok_beta, ch_w1, ch_w2, ch_gamma, ch_beta};
}

void WMixerParams::register_into(ParamPack& pack,
                                 const std::string& prefix) const {
  pack.add(prefix + ".tok_w1", tok_w1);
  pack.add(prefix + ".tok_w2", tok_w2);
  pack.add(prefix + ".tok_gamma", tok_gamma);
  pack.add(prefix + ".tok_beta", tok_beta);
  pack.add(prefix + ".ch_w1", ch_w1);
  pack.add(prefix + ".ch_w2", ch_w2);
  pack.add(prefix + ".ch_gamma", ch_gamma);
  pack.add(prefix + ".ch_beta", ch_beta);
}

std::vector<Tensor> window_partition(const Tensor& x, const WindowSpec& spec) {
  if (x.rank() != 3 || x.dim(1) != x.dim(2))
    throw std::invalid_argument("window_partition: expects {C,K,K}");
  const int c = x.dim(0), k = x.dim(1);
  spec.validate(k);
  Tensor src = spec.shift != 0 ? diff::roll2d(x, -spec.shift, -spec.shift) : x;
  const int per_side = k / spec.window_side;
  std::vector<Tensor> windows;
  windows.reserve(static_cast<std::size_t>(per_side) * per_side);
  for (int wr = 0; wr < per_side; ++wr)
    for (int wc = 0; wc < per_side; ++wc)
      windows.push_back(diff::gather(
          src, window_index(c, k, spec.window_side, wr, wc),
          {spec.area(), c}));
  return windows;
}

Tensor window_merge(const std::vector<Tensor>& windows, const WindowSpec& spec,
                    int channels, int patch_side) {
  spec.validate(patch_side);
  const int per_side = patch_side / spec.window_side;
  if (static_cast<int>(windows.size()) != per_side * per_side)
    throw std::invalid_argument("window_merge: window count mismatch");
  for (const Tensor& w : windows)
    if (w.rank() != 2 || w.dim(0) != spec.area() || w.dim(1) != channels)
      throw std::invalid_argument("window_merge: window shape mismatch");

  // single direct-write node so the partition/merge round trip is bitwise
  std::vector<double> out(
      static_cast<std::size_t>(channels) * patch_side * patch_side);
  bool rg = false;
  std::vector<std::vector<std::int64_t>> indices(windows.size());
  for (int wr = 0; wr < per_side; ++wr)
    for (int wc = 0; wc < per_side; ++wc) {
      int wi = wr * per_side + wc;
      indices[wi] = window_index(channels, patch_side, spec.window_side, wr, wc);
      const auto& idx = indices[wi];
      for (std::size_t i = 0; i < idx.size(); ++i)
        out[idx[i]] = windows[wi].data()[i];
      rg = rg || windows[wi].requires_grad();
    }
  Tensor merged =
      Tensor::from_data({channels, patch_side, patch_side}, std::move(out), rg);
  if (rg && Tape::active()) {
    Tape::active()->record([windows, merged, indices](Tape& tp) {
      const auto& go = tp.grad_buf(merged);
      for (std::size_t wi = 0; wi < windows.size(); ++wi) {
        if (!windows[wi].requires_grad()) continue;
        auto& gw = tp.grad_buf(windows[wi]);
        const auto& idx = indices[wi];
        for (std::size_t i = 0; i < idx.size(); ++i) gw[i] += go[idx[i]];
      }
    });
  }
  if (spec.shift != 0) merged = diff::roll2d(merged, spec.shift, spec.shift);
  return merged;
}

Tensor token_mix(const Tensor& x, const WMixerParams& p) {
  Tensor ln = diff::layernorm(x, p.tok_gamma, p.tok_beta);
  Tensor h = diff::gelu(diff::matmul(p.tok_w1, ln));
  return diff::add(x, diff::matmul(p.tok_w2, h));
}

Tensor channel_mix(const Tensor& u, const WMixerParams& p) {
  Tensor ln = diff::layernorm(u, p.ch_gamma, p.ch_beta);
  Tensor h = diff::gelu(diff::matmul(ln, p.ch_w1));
  return diff::add(u, diff::matmul(h, p.ch_w2));
}

Tensor w_mixer_block(const Tensor& x, const WindowSpec& spec,
                     const WMixerParams& p) {
  const int c = x.dim(0), k = x.dim(1);
  std::vector<Tensor> windows = window_partition(x, spec);
  for (Tensor& w : windows) w = channel_mix(token_mix(w, p), p);
  return window_merge(windows, spec, c, k);
}

SMBParams SMBParams::make(int in_channels, int ctx_channels, int out_channels,
                          int window_side, std::mt19937_64& rng) {
  SMBParams p;
  int total_in = in_channels + ctx_channels;
  p.conv_w = init_weight({out_channels, total_in, 3, 3},
                         static_cast<double>(total_in) * 9.0, rng);
  p.conv_b = Tensor::zeros({out_channels}, true);
  p.mix1 = WMixerParams::make(window_side * window_side, out_channels, rng);
  p.mix2 = WMixerParams::make(window_side * window_side, out_channels, rng);
  p.win.window_side = window_side;
  p.win.shift = 0;
  return p;
}

std::vector<Tensor> SMBParams::trainable() const {
  std::vector<Tensor> out = {conv_w, conv_b};
  for (const Tensor& t : mix1.trainable()) out.push_back(t);
  for (const Tensor& t : mix2.trainable()) out.push_back(t);
  return out;
}

void SMBParams::register_into(ParamPack& pack, const std::string& prefix) const {
  pack.add(prefix + ".conv_w", conv_w);
  pack.add(prefix + ".conv_b", conv_b);
  mix1.register_into(pack, prefix + ".mix1");
  mix2.register_into(pack, prefix + ".mix2");
}

Tensor smb_forward(const Tensor& x, const Tensor& context, const SMBParams& p) {
  if (context.rank() != 3 || context.dim(1) != x.dim(1) ||
      context.dim(2) != x.dim(2))
    throw std::invalid_argument("smb_forward: misaligned context features");
  Tensor h = diff::conv2d_3x3(diff::concat_channels({x, context}), p.conv_w,
                              p.conv_b, 1);
  WindowSpec plain = p.win;
  plain.shift = 0;
  WindowSpec shifted = p.win;
  shifted.shift = p.win.window_side % 2 == 0 ? p.win.window_side / 2 : 0;
  h = w_mixer_block(h, plain, p.mix1);
  h = w_mixer_block(h, shifted, p.mix2);
  return h;
}

PRNConfig PRNConfig::toy(int patch_side) {
  PRNConfig cfg;
  cfg.channels = {4, 8, 16, 32};
  cfg.window_side = 4;
  cfg.patch_side = patch_side;
  return cfg;
}

void PRNConfig::validate() const {
  if (levels != 4) throw std::invalid_argument("PRNConfig: levels must be 4");
  if (static_cast<int>(channels.size()) != levels)
    throw std::invalid_argument("PRNConfig: one channel count per level");
  if (patch_side % 8 != 0)
    throw std::invalid_argument("PRNConfig: patch side must be divisible by 8");
}

int PRNConfig::context_channels(int level, int image_channels) const {
  return level == 0 ? image_channels : channels[level];
}

WindowSpec PRNConfig::window_at(int level, bool shifted) const {
  int side = patch_side >> level;
  int ws = std::min(window_side, side);
  while (side % ws != 0) --ws;
  WindowSpec spec;
  spec.window_side = ws;
  spec.shift = (shifted && ws % 2 == 0) ? ws / 2 : 0;
  return spec;
}

ContextEncoderParams ContextEncoderParams::make(const PRNConfig& cfg,
                                                int image_channels,
                                                std::mt19937_64& rng) {
  cfg.validate();
  ContextEncoderParams p;
  for (int l = 1; l < cfg.levels; ++l) {
    int in = cfg.context_channels(l - 1, image_channels);
    int out = cfg.channels[l];
    p.w.push_back(init_weight({out, in, 3, 3}, in * 9.0, rng));
    p.b.push_back(Tensor::zeros({out}, true));
  }
  return p;
}

std::vector<Tensor> ContextEncoderParams::trainable() const {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < w.size(); ++i) {
    out.push_back(w[i]);
    out.push_back(b[i]);
  }
  return out;
}

void ContextEncoderParams::register_into(ParamPack& pack,
                                         const std::string& prefix) const {
  for (std::size_t i = 0; i < w.size(); ++i) {
    pack.add(prefix + ".conv" + std::to_string(i) + ".w", w[i]);
    pack.add(prefix + ".conv" + std::to_string(i) + ".b", b[i]);
  }
}

FeaturePyramid build_context_pyramid(const Tensor& image,
                                     const ContextEncoderParams& p) {
  if (image.rank() != 3)
    throw std::invalid_argument("build_context_pyramid: expects {C,H,W}");
  if (image.dim(1) % 8 != 0 || image.dim(2) % 8 != 0)
    throw std::invalid_argument(
        "build_context_pyramid: H and W must be divisible by 8");
  FeaturePyramid pyr;
  pyr.levels.push_back(image);
  Tensor cur = image;
  for (std::size_t l = 0; l < p.w.size(); ++l) {
    cur = diff::conv2d_3x3(cur, p.w[l], p.b[l], 2);
    pyr.levels.push_back(cur);
  }
  return pyr;
}

Tensor resize_bilinear(const Tensor& src, int out_h, int out_w) {
  if (src.rank() != 3) throw std::invalid_argument("resize_bilinear: {C,H,W}");
  const int h = src.dim(1), w = src.dim(2);
  const double sy = static_cast<double>(h) / out_h;
  const double sx = static_cast<double>(w) / out_w;
  std::vector<double> coords(static_cast<std::size_t>(2) * out_h * out_w);
  const std::int64_t plane = static_cast<std::int64_t>(out_h) * out_w;
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x) {
      coords[y * out_w + x] = (x + 0.5) * sx - 0.5;
      coords[plane + y * out_w + x] = (y + 0.5) * sy - 0.5;
    }
  return diff::bilinear_sample(src,
                               Tensor::from_data({2, out_h, out_w}, std::move(coords)));
}

std::pair<FeaturePyramid, FeaturePyramid> splat_pyramid(
    const FeaturePyramid& pyr0, const FeaturePyramid& pyr1,
    const warp::MultiFlowSet& flows, double t, const warp::FusionConfig& cfg) {
  flows.validate();
  if (pyr0.levels.size() != pyr1.levels.size())
    throw std::invalid_argument("splat_pyramid: level count mismatch");
  FeaturePyramid out0, out1;
  for (std::size_t l = 0; l < pyr0.levels.size(); ++l) {
    const Tensor& f0l = pyr0.levels[l];
    const Tensor& f1l = pyr1.levels[l];
    if (f0l.shape() != f1l.shape())
      throw std::invalid_argument("splat_pyramid: per-level shape mismatch");
    const int lh = f0l.dim(1), lw = f0l.dim(2);
    const double vec_scale = 1.0 / static_cast<double>(1 << l);

    std::vector<Tensor> f01l, f10l;
    for (const Tensor& f : flows.f01)
      f01l.push_back(diff::scale(resize_bilinear(f, lh, lw), vec_scale));
    for (const Tensor& f : flows.f10)
      f10l.push_back(diff::scale(resize_bilinear(f, lh, lw), vec_scale));
    Tensor s0l = diff::reshape(
        resize_bilinear(diff::reshape(flows.s0, {1, flows.s0.dim(0), flows.s0.dim(1)}),
                        lh, lw),
        {lh, lw});
    Tensor s1l = diff::reshape(
        resize_bilinear(diff::reshape(flows.s1, {1, flows.s1.dim(0), flows.s1.dim(1)}),
                        lh, lw),
        {lh, lw});
    auto [b0l, b1l] =
        warp::brightness_consistency(f0l, f1l, warp::mean_flow(f01l),
                                     warp::mean_flow(f10l));

    std::vector<warp::SplatGroup> g0, g1;
    for (const Tensor& f : f01l)
      g0.push_back({f0l, diff::scale(f, t), b0l, s0l,
                    warp::temporal_relevance(0, t)});
    for (const Tensor& f : f10l)
      g1.push_back({f1l, diff::scale(f, 1.0 - t), b1l, s1l,
                    warp::temporal_relevance(1, t)});
    out0.levels.push_back(warp::splat_groups(g0, cfg, 0.0).frame);
    out1.levels.push_back(warp::splat_groups(g1, cfg, 0.0).frame);
  }
  return {out0, out1};
}

PRNParams PRNParams::make(const PRNConfig& cfg, int image_channels,
                          std::mt19937_64& rng) {
  cfg.validate();
  PRNParams p;
  p.cfg = cfg;
  for (int l = 0; l < cfg.levels; ++l) {
    int in = l == 0 ? image_channels : cfg.channels[l];
    int ctx = 2 * cfg.context_channels(l, image_channels);
    p.enc.push_back(SMBParams::make(in, ctx, cfg.channels[l],
                                    cfg.window_at(l, false).window_side, rng));
    if (l > 0) {
      p.down_w.push_back(init_weight({cfg.channels[l], cfg.channels[l - 1], 3, 3},
                                     cfg.channels[l - 1] * 9.0, rng));
      p.down_b.push_back(Tensor::zeros({cfg.channels[l]}, true));
    }
  }
  for (int l = cfg.levels - 2; l >= 0; --l) {
    p.up_w.push_back(init_weight({cfg.channels[l], cfg.channels[l + 1], 3, 3},
                                 cfg.channels[l + 1] * 9.0, rng));
    p.up_b.push_back(Tensor::zeros({cfg.channels[l]}, true));
    int ctx = 2 * cfg.context_channels(l, image_channels);
    p.dec.push_back(SMBParams::make(2 * cfg.channels[l], ctx, cfg.channels[l],
                                    cfg.window_at(l, false).window_side, rng));
  }
  p.head_w = Tensor::zeros({image_channels, cfg.channels[0], 3, 3}, true);
  p.head_b = Tensor::zeros({image_channels}, true);
  return p;
}

std::vector<Tensor> PRNParams::trainable() const {
  std::vector<Tensor> out;
  auto push_all = [&out](const std::vector<Tensor>& ts) {
    out.insert(out.end(), ts.begin(), ts.end());
  };
  for (const SMBParams& s : enc) push_all(s.trainable());
  for (std::size_t i = 0; i < down_w.size(); ++i) {
    out.push_back(down_w[i]);
    out.push_back(down_b[i]);
  }
  for (const SMBParams& s : dec) push_all(s.trainable());
  for (std::size_t i = 0; i < up_w.size(); ++i) {
    out.push_back(up_w[i]);
    out.push_back(up_b[i]);
  }
  out.push_back(head_w);
  out.push_back(head_b);
  return out;
}

void PRNParams::register_into(ParamPack& pack, const std::string& prefix) const {
  for (std::size_t l = 0; l < enc.size(); ++l)
    enc[l].register_into(pack, prefix + ".enc" + std::to_string(l));
  for (std::size_t i = 0; i < down_w.size(); ++i) {
    pack.add(prefix + ".down" + std::to_string(i) + ".w", down_w[i]);
    pack.add(prefix + ".down" + std::to_string(i) + ".b", down_b[i]);
  }
  for (std::size_t l = 0; l < dec.size(); ++l)
    dec[l].register_into(pack, prefix + ".dec" + std::to_string(l));
  for (std::size_t i = 0; i < up_w.size(); ++i) {
    pack.add(prefix + ".up" + std::to_string(i) + ".w", up_w[i]);
    pack.add(prefix + ".up" + std::to_string(i) + ".b", up_b[i]);
  }
  pack.add(prefix + ".head.w", head_w);
  pack.add(prefix + ".head.b", head_b);
}

Tensor prn_refine_patch(const FeaturePyramid& patch_t0,
                        const FeaturePyramid& patch_t1, const Tensor& initial,
                        const PRNParams& params) {
  const PRNConfig& cfg = params.cfg;
  cfg.validate();
  if (initial.rank() != 3 || initial.dim(1) != cfg.patch_side ||
      initial.dim(2) != cfg.patch_side)
    throw std::invalid_argument("prn_refine_patch: patch side mismatch");
  if (static_cast<int>(patch_t0.levels.size()) != cfg.levels ||
      static_cast<int>(patch_t1.levels.size()) != cfg.levels)
    throw std::invalid_argument("prn_refine_patch: pyramid level mismatch");
  for (int l = 0; l < cfg.levels; ++l) {
    int side = cfg.patch_side >> l;
    if (patch_t0.levels[l].dim(1) != side || patch_t0.levels[l].dim(2) != side ||
        patch_t1.levels[l].dim(1) != side || patch_t1.levels[l].dim(2) != side)
      throw std::invalid_argument("prn_refine_patch: misaligned crops");
  }

  std::vector<Tensor> skips;
  Tensor cur = initial;
  for (int l = 0; l < cfg.levels; ++l) {
    if (l > 0)
      cur = diff::conv2d_3x3(cur, params.down_w[l - 1], params.down_b[l - 1], 2);
    Tensor ctx =
        diff::concat_channels({patch_t0.levels[l], patch_t1.levels[l]});
    cur = smb_forward(cur, ctx, params.enc[l]);
    skips.push_back(cur);
  }
  for (int l = cfg.levels - 2; l >= 0; --l) {
    std::size_t i = static_cast<std::size_t>(cfg.levels - 2 - l);
    Tensor up = diff::conv2d_3x3(diff::upsample_nearest2(cur), params.up_w[i],
                                 params.up_b[i], 1);
    Tensor ctx =
        diff::concat_channels({patch_t0.levels[l], patch_t1.levels[l]});
    cur = smb_forward(diff::concat_channels({up, skips[l]}), ctx, params.dec[i]);
  }
  Tensor residual = diff::conv2d_3x3(cur, params.head_w, params.head_b, 1);
  return diff::clamp01(diff::add(initial, residual));
}

}  // namespace m2m::mixer
