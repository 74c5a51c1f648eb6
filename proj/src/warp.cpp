#include "m2m/warp.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

#include "m2m/ops.hpp"

namespace m2m::warp {

using diff::Shape;
using diff::Tape;

namespace {

void check_map(const Tensor& t, int h, int w, const char* what) {
  if (t.rank() != 2 || t.dim(0) != h || t.dim(1) != w)
    throw std::invalid_argument(std::string(what) + ": expected {H,W} map");
}

void check_flow(const Tensor& t, int h, int w, const char* what) {
  if (t.rank() != 3 || t.dim(0) != 2 || t.dim(1) != h || t.dim(2) != w)
    throw std::invalid_argument(std::string(what) + ": expected {2,H,W} flow");
}

void check_unit_range(const Tensor& t, const char* what) {
  for (double v : t.data())
    if (!(v >= 0.0 && v <= 1.0))
      throw std::invalid_argument(std::string(what) + ": value outside [0,1]");
}

// Constant pixel-center grid {2,H,W} with x in channel 0, y in channel 1.
Tensor make_grid(int h, int w) {
  std::vector<double> g(static_cast<std::size_t>(2) * h * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      g[y * w + x] = static_cast<double>(x);
      g[static_cast<std::size_t>(h) * w + y * w + x] = static_cast<double>(y);
    }
  return Tensor::from_data({2, h, w}, std::move(g));
}

}  // namespace

void MultiFlowSet::validate() const {
  if (f01.empty() || f10.empty())
    throw std::invalid_argument("MultiFlowSet: N >= 1 required");
  if (f01.size() != f10.size())
    throw std::invalid_argument("MultiFlowSet: direction counts differ");
  const int h = f01[0].dim(1), w = f01[0].dim(2);
  for (const Tensor& f : f01) check_flow(f, h, w, "f01");
  for (const Tensor& f : f10) check_flow(f, h, w, "f10");
  check_map(s0, h, w, "s0");
  check_map(s1, h, w, "s1");
  check_unit_range(s0, "s0");
  check_unit_range(s1, "s1");
}

FusionConfig FusionConfig::defaults() {
  FusionConfig cfg;
  cfg.alpha = Tensor::scalar(1.0);
  return cfg;
}

void FusionConfig::validate() const {
  if (!alpha.defined() || alpha.numel() != 1)
    throw std::invalid_argument("FusionConfig: alpha must be a scalar");
  if (!(exponent_clamp > 0.0))
    throw std::invalid_argument("FusionConfig: exponent_clamp must be > 0");
  if (!(weight_eps > 0.0))
    throw std::invalid_argument("FusionConfig: weight_eps must be > 0");
}

SplatOutput splat_groups(const std::vector<SplatGroup>& groups,
                         const FusionConfig& cfg, double hole_value) {
  cfg.validate();
  if (groups.empty()) throw std::invalid_argument("splat_groups: no groups");
  const Tensor& v0 = groups[0].values;
  const int c = v0.rank() == 3 ? v0.dim(0) : 1;
  const int h = v0.dim(v0.rank() - 2);
  const int w = v0.dim(v0.rank() - 1);
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  for (const SplatGroup& g : groups) {
    if (g.values.shape() != v0.shape())
      throw std::invalid_argument("splat_groups: value shape mismatch");
    check_flow(g.flow, h, w, "flow");
    check_map(g.b, h, w, "b");
    check_map(g.s, h, w, "s");
  }
  const double alpha = cfg.alpha.value();

  // a footprint can only touch the frame when the warped position lands in
  // [-1, extent); this also rejects non-finite flow vectors
  auto in_range = [h, w](double tx, double ty) {
    return tx >= -1.0 && tx < w && ty >= -1.0 && ty < h;
  };

  // pass 1: per-target max exponent (output-invariant shift)
  std::vector<double> zmax(static_cast<std::size_t>(plane), -1e308);
  for (const SplatGroup& g : groups) {
    for (std::int64_t p = 0; p < plane; ++p) {
      int sy = static_cast<int>(p / w), sx = static_cast<int>(p % w);
      double tx = sx + g.flow.data()[p];
      double ty = sy + g.flow.data()[plane + p];
      if (!in_range(tx, ty)) continue;
      int x0 = static_cast<int>(std::floor(tx));
      int y0 = static_cast<int>(std::floor(ty));
      double e = g.b.data()[p] * g.s.data()[p] * alpha;
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
          int jx = x0 + dx, jy = y0 + dy;
          if (jx < 0 || jx >= w || jy < 0 || jy >= h) continue;
          std::int64_t j = static_cast<std::int64_t>(jy) * w + jx;
          if (e > zmax[j]) zmax[j] = e;
        }
    }
  }

  // pass 2: accumulate numerator and denominator in the normative order
  std::vector<double> num(static_cast<std::size_t>(c) * plane, 0.0);
  std::vector<double> den(static_cast<std::size_t>(plane), 0.0);
  for (const SplatGroup& g : groups) {
    for (std::int64_t p = 0; p < plane; ++p) {
      int sy = static_cast<int>(p / w), sx = static_cast<int>(p % w);
      double tx = sx + g.flow.data()[p];
      double ty = sy + g.flow.data()[plane + p];
      if (!in_range(tx, ty)) continue;
      int x0 = static_cast<int>(std::floor(tx));
      int y0 = static_cast<int>(std::floor(ty));
      double fx = tx - x0, fy = ty - y0;
      double e = g.b.data()[p] * g.s.data()[p] * alpha;
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
          int jx = x0 + dx, jy = y0 + dy;
          if (jx < 0 || jx >= w || jy < 0 || jy >= h) continue;
          std::int64_t j = static_cast<std::int64_t>(jy) * w + jx;
          double beta = (dx == 0 ? 1.0 - fx : fx) * (dy == 0 ? 1.0 - fy : fy);
          double shifted = e - zmax[j];
          if (shifted < -cfg.exponent_clamp) shifted = -cfg.exponent_clamp;
          double wgt = beta * std::exp(shifted) * g.r;
          den[j] += wgt;
          for (int ch = 0; ch < c; ++ch)
            num[ch * plane + j] += wgt * g.values.data()[ch * plane + p];
        }
    }
  }

  SplatOutput out;
  out.holes.assign(static_cast<std::size_t>(plane), 0);
  std::vector<double> fused(num.size());
  std::int64_t hole_count = 0;
  for (std::int64_t j = 0; j < plane; ++j) {
    if (den[j] <= cfg.weight_eps) {
      out.holes[j] = 1;
      ++hole_count;
      for (int ch = 0; ch < c; ++ch) fused[ch * plane + j] = hole_value;
    } else {
      for (int ch = 0; ch < c; ++ch)
        fused[ch * plane + j] = num[ch * plane + j] / den[j];
    }
  }
  for (double v : fused)
    if (!std::isfinite(v))
      throw std::runtime_error("splat_groups: non-finite accumulator");
  out.hole_ratio = static_cast<double>(hole_count) / static_cast<double>(plane);
  out.weight = Tensor::from_data({h, w}, den);

  bool rg = cfg.alpha.requires_grad();
  for (const SplatGroup& g : groups)
    rg = rg || g.values.requires_grad() || g.flow.requires_grad() ||
         g.b.requires_grad() || g.s.requires_grad();
  Tensor frame = Tensor::from_data(v0.shape(), std::move(fused), rg);
  out.frame = frame;

  if (rg && Tape::active()) {
    auto saved_den = std::make_shared<std::vector<double>>(std::move(den));
    auto saved_z = std::make_shared<std::vector<double>>(std::move(zmax));
    auto holes = std::make_shared<std::vector<std::uint8_t>>(out.holes);
    Tensor alpha_t = cfg.alpha;
    double clamp = cfg.exponent_clamp;
    Tape::active()->record([groups, alpha_t, frame, saved_den, saved_z, holes,
                            clamp, c, h, w, plane](Tape& tp) {
      const auto& go = tp.grad_buf(frame);
      const double alpha = alpha_t.value();
      std::vector<double>* ga =
          alpha_t.requires_grad() ? &tp.grad_buf(alpha_t) : nullptr;
      for (const SplatGroup& g : groups) {
        std::vector<double>* gv =
            g.values.requires_grad() ? &tp.grad_buf(g.values) : nullptr;
        std::vector<double>* gf =
            g.flow.requires_grad() ? &tp.grad_buf(g.flow) : nullptr;
        std::vector<double>* gb =
            g.b.requires_grad() ? &tp.grad_buf(g.b) : nullptr;
        std::vector<double>* gs =
            g.s.requires_grad() ? &tp.grad_buf(g.s) : nullptr;
        for (std::int64_t p = 0; p < plane; ++p) {
          int sy = static_cast<int>(p / w), sx = static_cast<int>(p % w);
          double tx = sx + g.flow.data()[p];
          double ty = sy + g.flow.data()[plane + p];
          if (!(tx >= -1.0 && tx < w && ty >= -1.0 && ty < h)) continue;
          int x0 = static_cast<int>(std::floor(tx));
          int y0 = static_cast<int>(std::floor(ty));
          double fx = tx - x0, fy = ty - y0;
          double e = g.b.data()[p] * g.s.data()[p] * alpha;
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              int jx = x0 + dx, jy = y0 + dy;
              if (jx < 0 || jx >= w || jy < 0 || jy >= h) continue;
              std::int64_t j = static_cast<std::int64_t>(jy) * w + jx;
              if ((*holes)[j]) continue;
              double d = (*saved_den)[j];
              double shifted = e - (*saved_z)[j];
              bool clamped = shifted < -clamp;
              if (clamped) shifted = -clamp;
              double ex = std::exp(shifted);
              double wx = dx == 0 ? 1.0 - fx : fx;
              double wy = dy == 0 ? 1.0 - fy : fy;
              double beta = wx * wy;
              double wgt = beta * ex * g.r;
              // A = sum_c g_out * (value - fused) / den
              double a = 0.0;
              for (int ch = 0; ch < c; ++ch) {
                double gc = go[ch * plane + j];
                if (gc == 0.0) continue;
                double diff =
                    g.values.data()[ch * plane + p] - frame.data()[ch * plane + j];
                a += gc * diff / d;
                if (gv) (*gv)[ch * plane + p] += gc * wgt / d;
              }
              if (a == 0.0) continue;
              if (!clamped) {
                double ge = a * wgt;  // d(weight)/d(exponent) = weight
                if (gb) (*gb)[p] += ge * g.s.data()[p] * alpha;
                if (gs) (*gs)[p] += ge * g.b.data()[p] * alpha;
                if (ga) (*ga)[0] += ge * g.b.data()[p] * g.s.data()[p];
              }
              if (gf) {
                double gbeta = a * ex * g.r;
                double dwx = dx == 0 ? -1.0 : 1.0;
                double dwy = dy == 0 ? -1.0 : 1.0;
                (*gf)[p] += gbeta * dwx * wy;
                (*gf)[plane + p] += gbeta * wx * dwy;
              }
            }
        }
      }
    });
  }
  return out;
}

MultiFlowSet scale_flows(const MultiFlowSet& flows, double t) {
  if (!(t > 0.0 && t < 1.0))
    throw std::invalid_argument("scale_flows: t must be in (0,1)");
  flows.validate();
  MultiFlowSet out;
  out.f01.reserve(flows.f01.size());
  out.f10.reserve(flows.f10.size());
  for (const Tensor& f : flows.f01) out.f01.push_back(diff::scale(f, t));
  for (const Tensor& f : flows.f10) out.f10.push_back(diff::scale(f, 1.0 - t));
  out.s0 = flows.s0;
  out.s1 = flows.s1;
  return out;
}

Tensor mean_flow(const std::vector<Tensor>& flows) {
  if (flows.empty()) throw std::invalid_argument("mean_flow: empty");
  Tensor acc = flows[0];
  for (std::size_t i = 1; i < flows.size(); ++i) acc = diff::add(acc, flows[i]);
  return diff::scale(acc, 1.0 / static_cast<double>(flows.size()));
}

Tensor backward_warp(const Tensor& frame, const Tensor& flow) {
  if (frame.rank() != 3) throw std::invalid_argument("backward_warp: {C,H,W}");
  const int h = frame.dim(1), w = frame.dim(2);
  check_flow(flow, h, w, "backward_warp");
  Tensor coords = diff::add(make_grid(h, w), flow);
  return diff::bilinear_sample(frame, coords);
}

std::pair<Tensor, Tensor> brightness_consistency(const Tensor& i0,
                                                 const Tensor& i1,
                                                 const Tensor& mean_f01,
                                                 const Tensor& mean_f10) {
  if (i0.shape() != i1.shape())
    throw std::invalid_argument("brightness_consistency: frame shape mismatch");
  auto residual = [](const Tensor& a, const Tensor& warped) {
    Tensor l1 = diff::abs_val(diff::sub(a, warped));
    // sum over channels -> {H,W}
    const int c = a.dim(0), h = a.dim(1), w = a.dim(2);
    Tensor summed = Tensor::zeros({h, w});
    if (c == 1) {
      summed = diff::reshape(l1, {h, w});
    } else {
      std::vector<std::int64_t> idx;
      idx.reserve(static_cast<std::size_t>(c) * h * w);
      // scatter channel planes onto one {H,W} accumulator
      for (int ch = 0; ch < c; ++ch)
        for (std::int64_t p = 0; p < static_cast<std::int64_t>(h) * w; ++p)
          idx.push_back(p);
      summed = diff::scatter_sum(l1, idx, {h, w});
    }
    return diff::neg(summed);
  };
  Tensor b0 = residual(i0, backward_warp(i1, mean_f01));
  Tensor b1 = residual(i1, backward_warp(i0, mean_f10));
  return {b0, b1};
}

double temporal_relevance(int source, double t) {
  if (!(t > 0.0 && t < 1.0))
    throw std::invalid_argument("temporal_relevance: t must be in (0,1)");
  if (source == 0) return 1.0 - t;
  if (source == 1) return t;
  throw std::invalid_argument("temporal_relevance: source must be 0 or 1");
}

SplatOutput m2m_splat_fuse(const Tensor& i0, const Tensor& i1,
                           const MultiFlowSet& flows_at_t, const Tensor& b0,
                           const Tensor& b1, const FusionConfig& cfg,
                           double t) {
  flows_at_t.validate();
  if (i0.shape() != i1.shape())
    throw std::invalid_argument("m2m_splat_fuse: frame shape mismatch");
  std::vector<SplatGroup> groups;
  groups.reserve(2 * flows_at_t.f01.size());
  double r0 = temporal_relevance(0, t), r1 = temporal_relevance(1, t);
  for (const Tensor& f : flows_at_t.f01)
    groups.push_back({i0, f, b0, flows_at_t.s0, r0});
  for (const Tensor& f : flows_at_t.f10)
    groups.push_back({i1, f, b1, flows_at_t.s1, r1});
  return splat_groups(groups, cfg, 0.0);
}

SplatOutput splat_error(const std::vector<Tensor>& errors01,
                        const std::vector<Tensor>& errors10,
                        const MultiFlowSet& flows_at_t, const Tensor& b0,
                        const Tensor& b1, const FusionConfig& cfg, double t) {
  flows_at_t.validate();
  if (errors01.size() != flows_at_t.f01.size() ||
      errors10.size() != flows_at_t.f10.size())
    throw std::invalid_argument("splat_error: one error map per sub-flow");
  for (const Tensor& e : errors01) check_unit_range(e, "errors01");
  for (const Tensor& e : errors10) check_unit_range(e, "errors10");
  std::vector<SplatGroup> groups;
  groups.reserve(errors01.size() + errors10.size());
  double r0 = temporal_relevance(0, t), r1 = temporal_relevance(1, t);
  for (std::size_t n = 0; n < errors01.size(); ++n)
    groups.push_back({errors01[n], flows_at_t.f01[n], b0, flows_at_t.s0, r0});
  for (std::size_t n = 0; n < errors10.size(); ++n)
    groups.push_back({errors10[n], flows_at_t.f10[n], b1, flows_at_t.s1, r1});
  return splat_groups(groups, cfg, 1.0);
}

Tensor fill_holes(const SplatOutput& out, const Tensor& i0, const Tensor& i1,
                  double t, HolePolicy policy) {
  if (policy == HolePolicy::mark_only) return out.frame;
  if (i0.shape() != out.frame.shape() || i1.shape() != out.frame.shape())
    throw std::invalid_argument("fill_holes: frame shape mismatch");
  const int c = out.frame.rank() == 3 ? out.frame.dim(0) : 1;
  const std::int64_t plane = out.frame.numel() / c;
  std::vector<double> mask_data(out.frame.data().size());
  for (int ch = 0; ch < c; ++ch)
    for (std::int64_t p = 0; p < plane; ++p)
      mask_data[ch * plane + p] = out.holes[p] ? 1.0 : 0.0;
  Tensor mask = Tensor::from_data(out.frame.shape(), std::move(mask_data));
  Tensor blend =
      diff::add(diff::scale(i0, 1.0 - t), diff::scale(i1, t));
  // holes carry value 0 in the fused frame, so adding the masked blend
  // leaves non-hole pixels untouched
  return diff::add(out.frame, diff::mul(mask, blend));
}

}  // namespace m2m::warp
