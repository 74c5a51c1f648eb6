#include "m2m/interpolate.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "m2m/flo.hpp"
#include "m2m/image.hpp"
#include "m2m/mixer.hpp"
#include "m2m/ops.hpp"
#include "m2m/params.hpp"
#include "m2m/ssr.hpp"

namespace m2m::pipe {

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void InterpolationRequest::validate() const {
  if (frame0_path.empty() || frame1_path.empty())
    throw std::invalid_argument("both input frames are required");
  if (flow01_paths.empty() || flow10_paths.empty())
    throw std::invalid_argument("both flow directions are required");
  if (flow01_paths.size() != flow10_paths.size())
    throw std::invalid_argument("flow path counts must match per direction");
  if (times.empty() && factor < 2)
    throw std::invalid_argument("either --times or --factor >= 2 is required");
  if (!times.empty() && factor != 0)
    throw std::invalid_argument("--times and --factor are mutually exclusive");
  double prev = 0.0;
  for (double t : times) {
    if (!(t > 0.0 && t < 1.0))
      throw std::invalid_argument("times must lie strictly inside (0,1)");
    if (t <= prev)
      throw std::invalid_argument("times must be strictly increasing");
    prev = t;
  }
  if (n_flows < 1) throw std::invalid_argument("--n-flows must be >= 1");
  if (!(ssr_ratio >= 0.0 && ssr_ratio <= 1.0))
    throw std::invalid_argument("--ssr-ratio must be in [0,1]");
  if (patch_side < 8 || patch_side % 8 != 0)
    throw std::invalid_argument("--patch-size must be a positive multiple of 8");
  if (image_format != "png" && image_format != "ppm")
    throw std::invalid_argument("output format must be png or ppm");
}

std::vector<double> InterpolationRequest::resolve_times() const {
  if (!times.empty()) return times;
  std::vector<double> out;
  out.reserve(factor - 1);
  for (int k = 1; k < factor; ++k)
    out.push_back(static_cast<double>(k) / static_cast<double>(factor));
  return out;
}

void RunManifest::set(std::string key, std::string value) {
  entries_.emplace_back(std::move(key), std::move(value));
}

void RunManifest::set(std::string key, double value) {
  set(std::move(key), fmt_double(value));
}

void RunManifest::set(std::string key, std::uint64_t value) {
  set(std::move(key), std::to_string(value));
}

const std::string* RunManifest::get(std::string_view key) const {
  for (const auto& [k, v] : entries_)
    if (k == key) return &v;
  return nullptr;
}

std::string RunManifest::serialize() const {
  std::string body;
  for (const auto& [k, v] : entries_) {
    body += k;
    body += " = ";
    body += v;
    body += '\n';
  }
  char hash[32];
  std::snprintf(hash, sizeof(hash), "%016llx",
                static_cast<unsigned long long>(fnv1a(body)));
  return body + "manifest_hash = " + hash + "\n";
}

RunManifest RunManifest::parse(const std::string& text) {
  RunManifest m;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::size_t sep = line.find(" = ");
    if (sep == std::string::npos)
      throw std::runtime_error("malformed manifest line: " + line);
    std::string key = line.substr(0, sep);
    std::string value = line.substr(sep + 3);
    if (key == "manifest_hash") continue;  // recomputed on serialize
    m.entries_.emplace_back(std::move(key), std::move(value));
  }
  return m;
}

void RunManifest::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write manifest: " + path);
  out << serialize();
}

RunManifest RunManifest::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read manifest: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

std::string format_time(double t) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", t);
  return buf;
}

std::vector<Tensor> replicate_flow(const Tensor& flow, int n, bool jitter) {
  static constexpr double kJitter[4][2] = {
      {0.5, 0.5}, {0.5, -0.5}, {-0.5, 0.5}, {-0.5, -0.5}};
  std::vector<Tensor> out;
  out.reserve(n);
  const std::int64_t plane = flow.numel() / 2;
  for (int i = 0; i < n; ++i) {
    if (!jitter || n == 1) {
      out.push_back(flow.detached_copy());
      continue;
    }
    std::vector<double> data(flow.data().begin(), flow.data().end());
    const double dx = kJitter[i % 4][0], dy = kJitter[i % 4][1];
    for (std::int64_t p = 0; p < plane; ++p) {
      data[p] += dx;
      data[plane + p] += dy;
    }
    out.push_back(Tensor::from_data(flow.shape(), std::move(data)));
  }
  return out;
}

InterpolationResult interpolate(const InterpolationRequest& request) {
  request.validate();
  InterpolationResult result;
  cost::CostLedger& ledger = result.ledger;

  Tensor i0 = io::read_image(request.frame0_path);
  Tensor i1 = io::read_image(request.frame1_path);
  if (i0.shape() != i1.shape())
    throw std::invalid_argument("input frames must share one resolution");
  const int c = i0.dim(0), h = i0.dim(1), w = i0.dim(2);

  // ---- shared stage: runs once per frame pair ----
  warp::MultiFlowSet flows;
  if (request.flow01_paths.size() == 1) {
    Tensor f01 = io::read_flo(request.flow01_paths[0]);
    Tensor f10 = io::read_flo(request.flow10_paths[0]);
    if (f01.dim(1) != h || f01.dim(2) != w || f10.dim(1) != h || f10.dim(2) != w)
      throw std::invalid_argument("flow resolution must match the frames");
    flows.f01 = replicate_flow(f01, request.n_flows, request.jitter);
    flows.f10 = replicate_flow(f10, request.n_flows, request.jitter);
    ledger.add_shared(2ull * request.n_flows * 2ull * h * w);
  } else {
    for (const std::string& p : request.flow01_paths)
      flows.f01.push_back(io::read_flo(p));
    for (const std::string& p : request.flow10_paths)
      flows.f10.push_back(io::read_flo(p));
    for (const Tensor& f : flows.f01)
      if (f.dim(1) != h || f.dim(2) != w)
        throw std::invalid_argument("flow resolution must match the frames");
    for (const Tensor& f : flows.f10)
      if (f.dim(1) != h || f.dim(2) != w)
        throw std::invalid_argument("flow resolution must match the frames");
  }
  const int n_flows = flows.count();
  flows.s0 = Tensor::full({h, w}, 1.0);  // reliability defaults to all-ones
  flows.s1 = Tensor::full({h, w}, 1.0);

  warp::FusionConfig cfg = warp::FusionConfig::defaults();
  cfg.alpha = Tensor::scalar(request.alpha);
  cfg.hole_policy = request.hole_policy;

  auto [b0, b1] = warp::brightness_consistency(
      i0, i1, warp::mean_flow(flows.f01), warp::mean_flow(flows.f10));
  ledger.add_shared(2ull * cost::macs_backward_warp(c, h, w) +
                    cost::macs_scale_flows(n_flows, h, w));

  const bool ssr_on = request.ssr_ratio > 0.0;
  mixer::PRNConfig prn_cfg;
  prn_cfg.patch_side = request.patch_side;
  mixer::FeaturePyramid pyr0, pyr1;
  mixer::PRNParams prn;
  std::vector<Tensor> err0, err1;
  if (ssr_on) {
    std::mt19937_64 rng(request.seed);
    auto ctx = mixer::ContextEncoderParams::make(prn_cfg, c, rng);
    prn = mixer::PRNParams::make(prn_cfg, c, rng);
    if (!request.prn_params_path.empty()) {
      diff::ParamPack pack;
      prn.register_into(pack, "prn");
      ctx.register_into(pack, "ctx");
      pack.assign_from(diff::ParamPack::load(request.prn_params_path));
    }
    pyr0 = mixer::build_context_pyramid(i0, ctx);
    pyr1 = mixer::build_context_pyramid(i1, ctx);
    for (std::size_t l = 1; l < pyr0.levels.size(); ++l) {
      const Tensor& lv = pyr0.levels[l];
      ledger.add_shared(2ull * cost::macs_conv2d_3x3(
                                   l == 1 ? c : prn_cfg.channels[l - 1],
                                   prn_cfg.channels[l], lv.dim(1), lv.dim(2)));
    }
    // default per-flow error scores derived from brightness consistency
    auto scores = [&](const Tensor& b) {
      std::vector<double> e(b.data().size());
      for (std::size_t i = 0; i < e.size(); ++i)
        e[i] = 1.0 - std::exp(b.data()[i]);
      return Tensor::from_data(b.shape(), std::move(e));
    };
    Tensor e0 = scores(b0), e1 = scores(b1);
    for (int n = 0; n < n_flows; ++n) {
      err0.push_back(e0);
      err1.push_back(e1);
    }
    ledger.add_shared(2ull * h * w);
  }

  // ---- per-frame stage ----
  result.times = request.resolve_times();
  for (double t : result.times) {
    ledger.begin_frame();
    warp::MultiFlowSet flows_t = warp::scale_flows(flows, t);
    ledger.add_unshared(cost::macs_scale_flows(n_flows, h, w));
    warp::SplatOutput splat = warp::m2m_splat_fuse(i0, i1, flows_t, b0, b1, cfg, t);
    ledger.add_unshared(cost::macs_splat(2 * n_flows, c, h, w));
    Tensor frame = warp::fill_holes(splat, i0, i1, t, cfg.hole_policy);
    ledger.add_unshared(cost::macs_fill_holes(c, h, w));

    if (ssr_on) {
      auto [wpyr0, wpyr1] = mixer::splat_pyramid(pyr0, pyr1, flows, t, cfg);
      for (std::size_t l = 0; l < wpyr0.levels.size(); ++l) {
        const Tensor& lv = wpyr0.levels[l];
        int lc = lv.dim(0), lh = lv.dim(1), lw = lv.dim(2);
        ledger.add_unshared(2ull * n_flows * cost::macs_resize(2, lh, lw) +
                            2ull * cost::macs_resize(1, lh, lw) +
                            2ull * cost::macs_backward_warp(lc, lh, lw) +
                            2ull * cost::macs_splat(n_flows, lc, lh, lw));
      }
      warp::SplatOutput esplat =
          warp::splat_error(err0, err1, flows_t, b0, b1, cfg, t);
      ledger.add_unshared(cost::macs_splat(2 * n_flows, 1, h, w));
      Tensor et = diff::reshape(esplat.frame, {h, w});
      ssr::RefineResult refined = ssr::refine_selected(
          frame, et, wpyr0, wpyr1, request.ssr_ratio, request.patch_side, prn);
      ledger.add_unshared(refined.unshared_macs);
      frame = refined.frame;
    }

    result.frames.push_back(frame);
    result.hole_ratios.push_back(splat.hole_ratio);
  }

  // ---- manifest ----
  RunManifest& m = result.manifest;
  m.set("version", std::string(kVersion));
  m.set("tool", std::string("m2m interpolate"));
  m.set("seed", static_cast<std::uint64_t>(request.seed));
  m.set("frame0", request.frame0_path);
  m.set("frame1", request.frame1_path);
  auto join = [](const std::vector<std::string>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) out += ',';
      out += v[i];
    }
    return out;
  };
  m.set("flow01", join(request.flow01_paths));
  m.set("flow10", join(request.flow10_paths));
  m.set("n_flows", static_cast<std::uint64_t>(n_flows));
  m.set("jitter", std::string(request.jitter ? "1" : "0"));
  m.set("alpha", request.alpha);
  m.set("exponent_clamp", cfg.exponent_clamp);
  m.set("weight_eps", cfg.weight_eps);
  m.set("hole_policy", std::string(cfg.hole_policy == warp::HolePolicy::mark_only
                                       ? "mark_only"
                                       : "blend_inputs"));
  m.set("ssr_ratio", request.ssr_ratio);
  m.set("patch_size", static_cast<std::uint64_t>(request.patch_side));
  m.set("psnr_cap_db", 99.0);
  m.set("ssim_luma", std::string("1"));
  {
    std::string ts;
    for (std::size_t i = 0; i < result.times.size(); ++i) {
      if (i) ts += ',';
      ts += format_time(result.times[i]);
    }
    m.set("times", ts);
  }
  for (std::size_t i = 0; i < result.times.size(); ++i) {
    std::string base = "frame[" + std::to_string(i) + "]";
    m.set(base + ".t", format_time(result.times[i]));
    m.set(base + ".file",
          "frame_t" + format_time(result.times[i]) + "." + request.image_format);
    m.set(base + ".hole_ratio", result.hole_ratios[i]);
    m.set(base + ".unshared_macs", ledger.per_frame()[i]);
  }
  m.set("ledger.shared_macs", ledger.shared());
  m.set("ledger.unshared_total_macs", ledger.unshared_total());
  m.set("ledger.frames", static_cast<std::uint64_t>(result.times.size()));
  m.set("ledger.total_macs", ledger.total());

  if (!request.out_dir.empty()) {
    std::filesystem::create_directories(request.out_dir);
    for (std::size_t i = 0; i < result.frames.size(); ++i) {
      const std::string* file = m.get("frame[" + std::to_string(i) + "].file");
      io::write_image(request.out_dir + "/" + *file, result.frames[i]);
    }
    m.save(request.out_dir + "/manifest.txt");
  }
  return result;
}

}  // namespace m2m::pipe
