// Command-line front end for the many-to-many splatting interpolation engine.
#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include "m2m/flo.hpp"
#include "m2m/image.hpp"
#include "m2m/interpolate.hpp"
#include "m2m/metrics.hpp"
#include "m2m/mixer.hpp"
#include "m2m/ops.hpp"
#include "m2m/params.hpp"
#include "m2m/selftest.hpp"
#include "m2m/ssr.hpp"
#include "m2m/warp.hpp"

namespace {

int print_results(const std::vector<m2m::check::CheckResult>& results) {
  int failed = 0;
  for (const auto& r : results) {
    std::printf("[%s] %-44s %.3e (tol %.1e)\n", r.pass ? "PASS" : "FAIL",
                r.name.c_str(), r.value, r.tolerance);
    if (!r.pass) ++failed;
  }
  std::printf("%zu checks, %d failed\n", results.size(), failed);
  return failed == 0 ? 0 : 1;
}

int run_interpolate(const m2m::pipe::InterpolationRequest& request) {
  std::filesystem::create_directories(request.out_dir);
  m2m::pipe::InterpolationResult result = m2m::pipe::interpolate(request);
  for (std::size_t i = 0; i < result.times.size(); ++i) {
    const std::string* file =
        result.manifest.get("frame[" + std::to_string(i) + "].file");
    std::printf("wrote %s/%s (hole_ratio=%g)\n", request.out_dir.c_str(),
                file->c_str(), result.hole_ratios[i]);
  }
  std::printf("shared_macs=%llu unshared_total_macs=%llu\n",
              static_cast<unsigned long long>(result.ledger.shared()),
              static_cast<unsigned long long>(result.ledger.unshared_total()));
  return 0;
}

struct SweepOptions {
  m2m::pipe::InterpolationRequest request;  // out_dir reused for the CSV
  std::string truth_path;
  double time = 0.5;
  std::vector<double> ratios = {0.0, 0.25, 0.5, 0.75, 1.0};
};

int run_sweep(SweepOptions& opt) {
  using m2m::diff::Tensor;
  opt.request.times = {opt.time};
  opt.request.factor = 0;
  opt.request.ssr_ratio = 0.0;  // the sweep applies its own refinement
  std::string out_dir = opt.request.out_dir;
  opt.request.out_dir.clear();
  m2m::pipe::InterpolationResult initial = m2m::pipe::interpolate(opt.request);

  Tensor truth = m2m::io::read_image(opt.truth_path);
  m2m::ssr::SweepRequest sweep;
  sweep.initial = initial.frames[0];
  sweep.truth = truth;
  sweep.error_map = m2m::ssr::error_target(sweep.initial, truth);
  sweep.patch_side = opt.request.patch_side;
  sweep.cost_config.patch_side = opt.request.patch_side;

  // with trained parameters the refinement network runs; otherwise the
  // sweep uses oracle ground-truth patch replacement
  m2m::mixer::PRNParams prn;
  m2m::mixer::FeaturePyramid wpyr0, wpyr1;
  if (!opt.request.prn_params_path.empty()) {
    Tensor i0 = m2m::io::read_image(opt.request.frame0_path);
    Tensor i1 = m2m::io::read_image(opt.request.frame1_path);
    std::mt19937_64 rng(opt.request.seed);
    m2m::mixer::PRNConfig cfg;
    cfg.patch_side = opt.request.patch_side;
    auto ctx = m2m::mixer::ContextEncoderParams::make(cfg, i0.dim(0), rng);
    prn = m2m::mixer::PRNParams::make(cfg, i0.dim(0), rng);
    m2m::diff::ParamPack pack;
    prn.register_into(pack, "prn");
    ctx.register_into(pack, "ctx");
    pack.assign_from(m2m::diff::ParamPack::load(opt.request.prn_params_path));

    m2m::warp::MultiFlowSet flows;
    if (opt.request.flow01_paths.size() == 1) {
      flows.f01 = m2m::pipe::replicate_flow(
          m2m::io::read_flo(opt.request.flow01_paths[0]), opt.request.n_flows,
          opt.request.jitter);
      flows.f10 = m2m::pipe::replicate_flow(
          m2m::io::read_flo(opt.request.flow10_paths[0]), opt.request.n_flows,
          opt.request.jitter);
    } else {
      for (const std::string& p : opt.request.flow01_paths)
        flows.f01.push_back(m2m::io::read_flo(p));
      for (const std::string& p : opt.request.flow10_paths)
        flows.f10.push_back(m2m::io::read_flo(p));
    }
    flows.s0 = Tensor::full({i0.dim(1), i0.dim(2)}, 1.0);
    flows.s1 = Tensor::full({i0.dim(1), i0.dim(2)}, 1.0);
    m2m::warp::FusionConfig fcfg = m2m::warp::FusionConfig::defaults();
    fcfg.alpha = Tensor::scalar(opt.request.alpha);
    auto [p0, p1] =
        m2m::mixer::splat_pyramid(m2m::mixer::build_context_pyramid(i0, ctx),
                                  m2m::mixer::build_context_pyramid(i1, ctx),
                                  flows, opt.time, fcfg);
    wpyr0 = p0;
    wpyr1 = p1;
    sweep.cost_config = prn.cfg;
    sweep.oracle = false;
    sweep.pyr_t0 = &wpyr0;
    sweep.pyr_t1 = &wpyr1;
    sweep.prn = &prn;
  }

  std::vector<m2m::ssr::SweepRow> rows =
      m2m::ssr::sweep_ratio(sweep, opt.ratios);
  m2m::ssr::write_sweep_csv(std::cout, rows);
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    std::ofstream csv(out_dir + "/sweep.csv", std::ios::binary);
    if (!csv) throw std::runtime_error("cannot write " + out_dir + "/sweep.csv");
    m2m::ssr::write_sweep_csv(csv, rows);
  }
  return 0;
}

int run_metrics(const std::string& a_path, const std::string& b_path) {
  m2m::diff::Tensor a = m2m::io::read_image(a_path);
  m2m::diff::Tensor b = m2m::io::read_image(b_path);
  std::printf("psnr_db = %.6f\n", m2m::metrics::psnr(a, b));
  std::printf("ssim = %.6f\n", m2m::metrics::ssim(a, b));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"many-to-many splatting frame interpolation engine"};
  app.require_subcommand(1);

  m2m::pipe::InterpolationRequest request;
  std::string hole_policy = "blend";

  auto add_common = [&](CLI::App* cmd, bool need_out) {
    cmd->add_option("--frame0", request.frame0_path, "first input frame")
        ->required();
    cmd->add_option("--frame1", request.frame1_path, "second input frame")
        ->required();
    cmd->add_option("--flow01", request.flow01_paths,
                    ".flo file(s), frame 0 -> 1")
        ->required();
    cmd->add_option("--flow10", request.flow10_paths,
                    ".flo file(s), frame 1 -> 0")
        ->required();
    cmd->add_option("--alpha", request.alpha, "fusion weight scale");
    cmd->add_option("--n-flows", request.n_flows,
                    "sub-flows per direction when replicating a single flow");
    cmd->add_flag("--jitter", request.jitter,
                  "half-pixel diagonal jitter on replicated sub-flows");
    cmd->add_option("--patch-size", request.patch_side,
                    "refinement patch side in pixels");
    cmd->add_option("--seed", request.seed, "seed for all randomness");
    cmd->add_option("--prn-params", request.prn_params_path,
                    "trained refinement parameters (.m2mp)");
    auto* out = cmd->add_option("--out", request.out_dir, "output directory");
    if (need_out) out->required();
  };

  auto* interp = app.add_subcommand("interpolate",
                                    "interpolate frames at the given times");
  add_common(interp, true);
  interp->add_option("--times", request.times,
                     "time steps strictly inside (0,1)");
  interp->add_option("--factor", request.factor,
                     "emit factor-1 frames at t=k/factor");
  interp->add_option("--ssr-ratio", request.ssr_ratio,
                     "ratio of patches refined by the selective stage");
  interp->add_option("--format", request.image_format, "png or ppm");
  interp->add_option("--hole-policy", hole_policy, "mark or blend");

  SweepOptions sweep_opt;
  auto* sweep = app.add_subcommand(
      "sweep", "trade-off table over refinement ratios (needs ground truth)");
  add_common(sweep, false);
  sweep->add_option("--truth", sweep_opt.truth_path, "ground-truth frame")
      ->required();
  sweep->add_option("--time", sweep_opt.time, "interpolation time step");
  sweep->add_option("--ratios", sweep_opt.ratios, "refinement ratios");

  std::uint64_t check_seed = 7;
  auto* gradcheck_cmd =
      app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gradcheck_cmd->add_option("--seed", check_seed, "seed for test points");
  auto* selftest_cmd =
      app.add_subcommand("selftest", "gradient and property suites");
  selftest_cmd->add_option("--seed", check_seed, "seed for test points");

  std::string metrics_a, metrics_b;
  auto* metrics_cmd =
      app.add_subcommand("metrics", "psnr/ssim between two images");
  metrics_cmd->add_option("a", metrics_a, "first image")->required();
  metrics_cmd->add_option("b", metrics_b, "second image")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (interp->parsed()) {
      request.hole_policy = hole_policy == "mark"
                                ? m2m::warp::HolePolicy::mark_only
                                : m2m::warp::HolePolicy::blend_inputs;
      return run_interpolate(request);
    }
    if (sweep->parsed()) {
      sweep_opt.request = request;
      return run_sweep(sweep_opt);
    }
    if (gradcheck_cmd->parsed())
      return print_results(m2m::check::gradient_suite(check_seed));
    if (selftest_cmd->parsed()) {
      auto results = m2m::check::gradient_suite(check_seed);
      auto props = m2m::check::property_suite(check_seed);
      results.insert(results.end(), props.begin(), props.end());
      return print_results(results);
    }
    if (metrics_cmd->parsed()) return run_metrics(metrics_a, metrics_b);
  } catch (const m2m::io::flo_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const m2m::io::image_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
