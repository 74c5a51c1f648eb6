#pragma once

#include <cstdint>
#include <ostream>
#include <utility>
#include <vector>

#include "m2m/mixer.hpp"
#include "m2m/tensor.hpp"

namespace m2m::ssr {

using diff::Tensor;

// Patch grid over the frame with ceil division; edge patches are smaller,
// never padded. Selected coordinates are unique (row, col) grid cells.
struct PatchSelection {
  int patch_side = 0;
  int grid_h = 0, grid_w = 0;
  std::vector<std::pair<int, int>> picks;
  double ratio = 0.0;
};

// Channel-summed absolute residual normalized by its frame maximum; an
// all-zero residual yields an all-zero map.
Tensor error_target(const Tensor& interpolated, const Tensor& truth);

// Mean absolute difference, differentiable w.r.t. the prediction.
Tensor err_loss(const Tensor& predicted, const Tensor& target);

// mean(sqrt(diff^2 + eps^2)) with eps = 1e-6.
Tensor charbonnier_loss(const Tensor& pred, const Tensor& truth);

// Max pool with k x k blocks; ragged edges pool the available pixels.
Tensor downsample_error(const Tensor& error_map, int k);

// ceil(p * cells) cells with the highest values; ties break toward the
// lower row-major index. Deterministic.
PatchSelection select_top_p(const Tensor& error_small, double p,
                            int patch_side);

Tensor crop_region(const Tensor& x, int y0, int x0, int height, int width);
std::vector<Tensor> crop_patches(const Tensor& x, const PatchSelection& sel);
// Writes the patches over a copy of base; untouched pixels stay bitwise
// identical. Differentiable through base and patches.
Tensor paste_patches(const Tensor& base, const std::vector<Tensor>& patches,
                     const PatchSelection& sel);

// Oracle refinement: replace the selected patches with ground truth.
Tensor replace_selected(const Tensor& interpolated, const Tensor& truth,
                        const PatchSelection& sel);

struct RefineResult {
  Tensor frame;
  PatchSelection selection;
  std::uint64_t unshared_macs = 0;
};

// downsample -> select -> crop -> refine each patch -> paste. Edge patches
// smaller than the nominal side are left unrefined (the refinement network
// needs aligned full-size crops); the cost model charges the nominal patch
// cost per selected patch so the ledger stays shape-based.
RefineResult refine_selected(const Tensor& interpolated,
                             const Tensor& error_map,
                             const mixer::FeaturePyramid& pyr_t0,
                             const mixer::FeaturePyramid& pyr_t1, double p,
                             int patch_side, const mixer::PRNParams& prn);

struct SweepRow {
  double ratio = 0.0;
  double psnr_db = 0.0;
  double ssim = 0.0;
  std::uint64_t unshared_flops = 0;
};

struct SweepRequest {
  Tensor initial;    // I_t
  Tensor truth;      // ground truth frame
  Tensor error_map;  // selection guidance at frame resolution
  int patch_side = 32;
  mixer::PRNConfig cost_config;           // costing basis
  bool oracle = true;                     // ground-truth patch replacement
  const mixer::FeaturePyramid* pyr_t0 = nullptr;  // required when !oracle
  const mixer::FeaturePyramid* pyr_t1 = nullptr;
  const mixer::PRNParams* prn = nullptr;
};

std::vector<SweepRow> sweep_ratio(const SweepRequest& request,
                                  const std::vector<double>& ratios);
void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows);

}  // namespace m2m::ssr
