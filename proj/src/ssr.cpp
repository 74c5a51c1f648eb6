#include "m2m/ssr.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "m2m/cost.hpp"
#include "m2m/metrics.hpp"
#include "m2m/ops.hpp"

namespace m2m::ssr {

using diff::Shape;
using diff::Tape;

Tensor error_target(const Tensor& interpolated, const Tensor& truth) {
  if (interpolated.shape() != truth.shape())
    throw std::invalid_argument("error_target: shape mismatch");
  const int c = interpolated.dim(0), h = interpolated.dim(1),
            w = interpolated.dim(2);
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  std::vector<double> residual(static_cast<std::size_t>(plane), 0.0);
  for (int ch = 0; ch < c; ++ch)
    for (std::int64_t p = 0; p < plane; ++p)
      residual[p] +=
          std::fabs(interpolated.data()[ch * plane + p] - truth.data()[ch * plane + p]);
  double rmax = 0.0;
  for (double v : residual) rmax = std::max(rmax, v);
  if (rmax > 0.0)
    for (double& v : residual) v /= rmax;
  return Tensor::from_data({h, w}, std::move(residual));
}

Tensor err_loss(const Tensor& predicted, const Tensor& target) {
  if (predicted.shape() != target.shape())
    throw std::invalid_argument("err_loss: shape mismatch");
  return diff::mean(diff::abs_val(diff::sub(predicted, target)));
}

Tensor charbonnier_loss(const Tensor& pred, const Tensor& truth) {
  if (pred.shape() != truth.shape())
    throw std::invalid_argument("charbonnier_loss: shape mismatch");
  constexpr double kEps = 1e-6;
  Tensor d = diff::sub(pred, truth);
  return diff::mean(diff::sqrt_val(diff::add_scalar(diff::mul(d, d), kEps * kEps)));
}

Tensor downsample_error(const Tensor& error_map, int k) {
  if (k < 1) throw std::invalid_argument("downsample_error: k must be >= 1");
  if (error_map.rank() != 2)
    throw std::invalid_argument("downsample_error: expects {H,W}");
  const int h = error_map.dim(0), w = error_map.dim(1);
  const int gh = (h + k - 1) / k, gw = (w + k - 1) / k;
  std::vector<double> out(static_cast<std::size_t>(gh) * gw);
  for (int gy = 0; gy < gh; ++gy)
    for (int gx = 0; gx < gw; ++gx) {
      double best = -1e308;
      int y_end = std::min((gy + 1) * k, h), x_end = std::min((gx + 1) * k, w);
      for (int y = gy * k; y < y_end; ++y)
        for (int x = gx * k; x < x_end; ++x)
          best = std::max(best, error_map.data()[y * w + x]);
      out[gy * gw + gx] = best;
    }
  return Tensor::from_data({gh, gw}, std::move(out));
}

PatchSelection select_top_p(const Tensor& error_small, double p,
                            int patch_side) {
  if (!(p >= 0.0 && p <= 1.0))
    throw std::invalid_argument("select_top_p: p must be in [0,1]");
  if (error_small.rank() != 2)
    throw std::invalid_argument("select_top_p: expects {H,W}");
  PatchSelection sel;
  sel.patch_side = patch_side;
  sel.grid_h = error_small.dim(0);
  sel.grid_w = error_small.dim(1);
  sel.ratio = p;
  const std::int64_t cells = error_small.numel();
  const std::int64_t count =
      static_cast<std::int64_t>(std::ceil(p * static_cast<double>(cells)));
  if (count == 0) return sel;

  std::vector<std::int64_t> order(static_cast<std::size_t>(cells));
  std::iota(order.begin(), order.end(), 0);
  auto cmp = [&error_small](std::int64_t a, std::int64_t b) {
    double va = error_small.data()[a], vb = error_small.data()[b];
    if (va != vb) return va > vb;
    return a < b;  // lower row-major index wins ties
  };
  std::partial_sort(order.begin(), order.begin() + count, order.end(), cmp);
  std::vector<std::int64_t> picked(order.begin(), order.begin() + count);
  std::sort(picked.begin(), picked.end());
  sel.picks.reserve(picked.size());
  for (std::int64_t idx : picked)
    sel.picks.emplace_back(static_cast<int>(idx / sel.grid_w),
                           static_cast<int>(idx % sel.grid_w));
  return sel;
}

Tensor crop_region(const Tensor& x, int y0, int x0, int height, int width) {
  if (x.rank() != 3) throw std::invalid_argument("crop_region: expects {C,H,W}");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (y0 < 0 || x0 < 0 || y0 + height > h || x0 + width > w)
    throw std::out_of_range("crop_region: region outside the frame");
  std::vector<std::int64_t> idx;
  idx.reserve(static_cast<std::size_t>(c) * height * width);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < height; ++y)
      for (int xx = 0; xx < width; ++xx)
        idx.push_back((static_cast<std::int64_t>(ch) * h + y0 + y) * w + x0 + xx);
  return diff::gather(x, idx, {c, height, width});
}

namespace {

void patch_bounds(const PatchSelection& sel, int frame_h, int frame_w,
                  int pick_index, int& y0, int& x0, int& ph, int& pw) {
  auto [r, cidx] = sel.picks[pick_index];
  if (r < 0 || r >= sel.grid_h || cidx < 0 || cidx >= sel.grid_w)
    throw std::out_of_range("patch coordinate outside the grid");
  y0 = r * sel.patch_side;
  x0 = cidx * sel.patch_side;
  ph = std::min(sel.patch_side, frame_h - y0);
  pw = std::min(sel.patch_side, frame_w - x0);
}

}  // namespace

std::vector<Tensor> crop_patches(const Tensor& x, const PatchSelection& sel) {
  std::vector<Tensor> out;
  out.reserve(sel.picks.size());
  for (std::size_t i = 0; i < sel.picks.size(); ++i) {
    int y0, x0, ph, pw;
    patch_bounds(sel, x.dim(1), x.dim(2), static_cast<int>(i), y0, x0, ph, pw);
    out.push_back(crop_region(x, y0, x0, ph, pw));
  }
  return out;
}

Tensor paste_patches(const Tensor& base, const std::vector<Tensor>& patches,
                     const PatchSelection& sel) {
  if (patches.size() != sel.picks.size())
    throw std::invalid_argument("paste_patches: patch count mismatch");
  const int c = base.dim(0), h = base.dim(1), w = base.dim(2);
  std::vector<double> out(base.data().begin(), base.data().end());
  std::vector<std::vector<std::int64_t>> indices(patches.size());
  bool rg = base.requires_grad();
  for (std::size_t i = 0; i < patches.size(); ++i) {
    int y0, x0, ph, pw;
    patch_bounds(sel, h, w, static_cast<int>(i), y0, x0, ph, pw);
    if (patches[i].rank() != 3 || patches[i].dim(0) != c ||
        patches[i].dim(1) != ph || patches[i].dim(2) != pw)
      throw std::invalid_argument("paste_patches: patch shape mismatch");
    auto& idx = indices[i];
    idx.reserve(static_cast<std::size_t>(c) * ph * pw);
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < ph; ++y)
        for (int xx = 0; xx < pw; ++xx)
          idx.push_back((static_cast<std::int64_t>(ch) * h + y0 + y) * w + x0 + xx);
    for (std::size_t j = 0; j < idx.size(); ++j)
      out[idx[j]] = patches[i].data()[j];
    rg = rg || patches[i].requires_grad();
  }
  Tensor result = Tensor::from_data(base.shape(), std::move(out), rg);
  if (rg && Tape::active()) {
    Tape::active()->record([base, patches, result, indices](Tape& tp) {
      const auto& go = tp.grad_buf(result);
      if (base.requires_grad()) {
        auto& gb = tp.grad_buf(base);
        std::vector<bool> covered(gb.size(), false);
        for (const auto& idx : indices)
          for (std::int64_t j : idx) covered[static_cast<std::size_t>(j)] = true;
        for (std::size_t i = 0; i < gb.size(); ++i)
          if (!covered[i]) gb[i] += go[i];
      }
      for (std::size_t i = 0; i < patches.size(); ++i) {
        if (!patches[i].requires_grad()) continue;
        auto& gp = tp.grad_buf(patches[i]);
        for (std::size_t j = 0; j < indices[i].size(); ++j)
          gp[j] += go[indices[i][j]];
      }
    });
  }
  return result;
}

Tensor replace_selected(const Tensor& interpolated, const Tensor& truth,
                        const PatchSelection& sel) {
  if (interpolated.shape() != truth.shape())
    throw std::invalid_argument("replace_selected: shape mismatch");
  return paste_patches(interpolated, crop_patches(truth, sel), sel);
}

RefineResult refine_selected(const Tensor& interpolated,
                             const Tensor& error_map,
                             const mixer::FeaturePyramid& pyr_t0,
                             const mixer::FeaturePyramid& pyr_t1, double p,
                             int patch_side, const mixer::PRNParams& prn) {
  if (error_map.rank() != 2 || error_map.dim(0) != interpolated.dim(1) ||
      error_map.dim(1) != interpolated.dim(2))
    throw std::invalid_argument("refine_selected: error map misaligned");
  if (prn.cfg.patch_side != patch_side)
    throw std::invalid_argument("refine_selected: patch side mismatch with PRN");

  RefineResult result;
  Tensor e_small = downsample_error(error_map, patch_side);
  result.selection = select_top_p(e_small, p, patch_side);
  const std::uint64_t per_patch = cost::macs_prn_patch(
      patch_side, interpolated.dim(0), prn.cfg.channels, prn.cfg.window_side);
  result.unshared_macs = per_patch * result.selection.picks.size();
  if (result.selection.picks.empty()) {
    result.frame = interpolated;
    return result;
  }

  const int h = interpolated.dim(1), w = interpolated.dim(2);
  std::vector<Tensor> refined;
  refined.reserve(result.selection.picks.size());
  for (std::size_t i = 0; i < result.selection.picks.size(); ++i) {
    int y0, x0, ph, pw;
    patch_bounds(result.selection, h, w, static_cast<int>(i), y0, x0, ph, pw);
    Tensor patch = crop_region(interpolated, y0, x0, ph, pw);
    if (ph != patch_side || pw != patch_side) {
      refined.push_back(patch);  // ragged edge patch, left unrefined
      continue;
    }
    mixer::FeaturePyramid crop0, crop1;
    for (int l = 0; l < prn.cfg.levels; ++l) {
      int side = patch_side >> l;
      crop0.levels.push_back(
          crop_region(pyr_t0.levels[l], y0 >> l, x0 >> l, side, side));
      crop1.levels.push_back(
          crop_region(pyr_t1.levels[l], y0 >> l, x0 >> l, side, side));
    }
    refined.push_back(mixer::prn_refine_patch(crop0, crop1, patch, prn));
  }
  result.frame = paste_patches(interpolated, refined, result.selection);
  return result;
}

std::vector<SweepRow> sweep_ratio(const SweepRequest& request,
                                  const std::vector<double>& ratios) {
  if (!request.oracle && (!request.pyr_t0 || !request.pyr_t1 || !request.prn))
    throw std::invalid_argument(
        "sweep_ratio: network refinement needs pyramids and parameters");
  std::vector<SweepRow> rows;
  rows.reserve(ratios.size());
  const std::uint64_t per_patch =
      cost::macs_prn_patch(request.patch_side, request.initial.dim(0),
                           request.cost_config.channels,
                           request.cost_config.window_side);
  for (double ratio : ratios) {
    SweepRow row;
    row.ratio = ratio;
    Tensor frame;
    if (request.oracle) {
      Tensor e_small = downsample_error(request.error_map, request.patch_side);
      PatchSelection sel = select_top_p(e_small, ratio, request.patch_side);
      frame = replace_selected(request.initial, request.truth, sel);
      row.unshared_flops = per_patch * sel.picks.size();
    } else {
      RefineResult r =
          refine_selected(request.initial, request.error_map, *request.pyr_t0,
                          *request.pyr_t1, ratio, request.patch_side,
                          *request.prn);
      frame = r.frame;
      row.unshared_flops = r.unshared_macs;
    }
    row.psnr_db = metrics::psnr(frame, request.truth);
    row.ssim = metrics::ssim(frame, request.truth);
    rows.push_back(row);
  }
  return rows;
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  out << "ratio,psnr_db,ssim,unshared_flops\n";
  char buf[128];
  for (const SweepRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%g,%.6f,%.6f,%llu\n", r.ratio, r.psnr_db,
                  r.ssim, static_cast<unsigned long long>(r.unshared_flops));
    out << buf;
  }
}

}  // namespace m2m::ssr
