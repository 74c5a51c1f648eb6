#include "m2m/selftest.hpp"

#include <unistd.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "m2m/adam.hpp"
#include "m2m/flo.hpp"
#include "m2m/gradcheck.hpp"
#include "m2m/image.hpp"
#include "m2m/interpolate.hpp"
#include "m2m/lowrank.hpp"
#include "m2m/metrics.hpp"
#include "m2m/mixer.hpp"
#include "m2m/ops.hpp"
#include "m2m/ssr.hpp"
#include "m2m/warp.hpp"

namespace m2m::check {

namespace {

using diff::Shape;
using diff::Tape;
using diff::Tensor;

Tensor rand_tensor(Shape shape, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(static_cast<std::size_t>(diff::shape_numel(shape)));
  for (double& x : v) x = dist(rng);
  return Tensor::from_data(std::move(shape), std::move(v));
}

bool bits_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(),
                     a.data().size() * sizeof(double)) == 0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i)
    worst = std::max(worst, std::fabs(a.data()[i] - b.data()[i]));
  return worst;
}

struct Suite {
  std::vector<CheckResult> results;
  void add(std::string name, double value, double tol) {
    results.push_back({std::move(name), value, tol, value <= tol});
  }
  void add_bool(std::string name, bool ok) {
    results.push_back({std::move(name), ok ? 0.0 : 1.0, 0.0, ok});
  }
};

// shared random fixture for the splat gradient checks
struct SplatFixture {
  int n = 2;
  Tensor i0, i1, b0, b1, s0, s1, alpha;
  std::vector<Tensor> f01, f10;
  double t = 0.375;

  explicit SplatFixture(std::mt19937_64& rng, int hw = 8, int c = 3) {
    i0 = rand_tensor({c, hw, hw}, 0.0, 1.0, rng);
    i1 = rand_tensor({c, hw, hw}, 0.0, 1.0, rng);
    b0 = rand_tensor({hw, hw}, -3.0, 0.0, rng);
    b1 = rand_tensor({hw, hw}, -3.0, 0.0, rng);
    s0 = rand_tensor({hw, hw}, 0.05, 0.95, rng);
    s1 = rand_tensor({hw, hw}, 0.05, 0.95, rng);
    alpha = Tensor::scalar(1.3);
    for (int i = 0; i < n; ++i) {
      f01.push_back(rand_tensor({2, hw, hw}, -2.0, 2.0, rng));
      f10.push_back(rand_tensor({2, hw, hw}, -2.0, 2.0, rng));
    }
  }

  warp::MultiFlowSet flows() const {
    warp::MultiFlowSet fs;
    fs.f01 = f01;
    fs.f10 = f10;
    fs.s0 = s0;
    fs.s1 = s1;
    return fs;
  }

  warp::FusionConfig config() const {
    warp::FusionConfig cfg = warp::FusionConfig::defaults();
    cfg.alpha = alpha;
    return cfg;
  }
};

Tensor frame_loss(const Tensor& frame) {
  return diff::mean(diff::mul(frame, frame));
}

}  // namespace

std::vector<CheckResult> gradient_suite(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Suite s;
  const double tol = 1e-4;

  // spec'd sanity case: quadratics are exact under central differences
  {
    Tensor x = rand_tensor({6}, -1.0, 1.0, rng);
    s.add("grad.quadratic",
          diff::gradcheck([](const Tensor& v) { return diff::sum(diff::mul(v, v)); }, x),
          1e-8);
  }

  // elementwise primitives, mixed with a fixed mask so gradients vary
  {
    Tensor m = rand_tensor({3, 4}, -1.0, 1.0, rng);
    auto unary = [&](const char* name, Tensor (*op)(const Tensor&), double lo,
                     double hi) {
      Tensor x = rand_tensor({3, 4}, lo, hi, rng);
      s.add(std::string("grad.") + name,
            diff::gradcheck(
                [&m, op](const Tensor& v) { return diff::mean(diff::mul(op(v), m)); },
                x),
            tol);
    };
    unary("gelu", diff::gelu, -2.0, 2.0);
    unary("sigmoid", diff::sigmoid, -3.0, 3.0);
    unary("exp", diff::exp_val, -1.0, 1.0);
    unary("sqrt", diff::sqrt_val, 0.5, 2.0);
    unary("neg", diff::neg, -1.0, 1.0);
    Tensor xa = rand_tensor({3, 4}, 0.3, 1.0, rng);  // away from the abs kink
    s.add("grad.abs",
          diff::gradcheck(
              [&m](const Tensor& v) { return diff::mean(diff::mul(diff::abs_val(v), m)); },
              xa),
          tol);
    Tensor xc = rand_tensor({3, 4}, 0.1, 0.9, rng);
    s.add("grad.clamp01",
          diff::gradcheck(
              [&m](const Tensor& v) { return diff::mean(diff::mul(diff::clamp01(v), m)); },
              xc),
          tol);

    Tensor other = rand_tensor({3, 4}, -1.0, 1.0, rng);
    s.add("grad.add",
          diff::gradcheck(
              [&](const Tensor& v) { return diff::mean(diff::mul(diff::add(v, other), m)); },
              rand_tensor({3, 4}, -1.0, 1.0, rng)),
          tol);
    s.add("grad.mul",
          diff::gradcheck(
              [&](const Tensor& v) { return diff::mean(diff::mul(diff::mul(v, other), m)); },
              rand_tensor({3, 4}, -1.0, 1.0, rng)),
          tol);
  }

  // matmul (both sides)
  {
    Tensor a = rand_tensor({3, 4}, -1.0, 1.0, rng);
    Tensor b = rand_tensor({4, 2}, -1.0, 1.0, rng);
    s.add("grad.matmul.lhs",
          diff::gradcheck(
              [&b](const Tensor& v) { return frame_loss(diff::matmul(v, b)); }, a),
          tol);
    s.add("grad.matmul.rhs",
          diff::gradcheck(
              [&a](const Tensor& v) { return frame_loss(diff::matmul(a, v)); }, b),
          tol);
  }

  // conv2d 3x3, both strides, all three inputs
  {
    Tensor x = rand_tensor({2, 5, 6}, -1.0, 1.0, rng);
    Tensor w = rand_tensor({3, 2, 3, 3}, -0.5, 0.5, rng);
    Tensor b = rand_tensor({3}, -0.5, 0.5, rng);
    s.add("grad.conv2d_s1.x",
          diff::gradcheck(
              [&](const Tensor& v) { return frame_loss(diff::conv2d_3x3(v, w, b, 1)); }, x),
          tol);
    s.add("grad.conv2d_s1.w",
          diff::gradcheck(
              [&](const Tensor& v) { return frame_loss(diff::conv2d_3x3(x, v, b, 1)); }, w),
          tol);
    s.add("grad.conv2d_s1.bias",
          diff::gradcheck(
              [&](const Tensor& v) { return frame_loss(diff::conv2d_3x3(x, w, v, 1)); }, b),
          tol);
    s.add("grad.conv2d_s2.x",
          diff::gradcheck(
              [&](const Tensor& v) { return frame_loss(diff::conv2d_3x3(v, w, b, 2)); }, x),
          tol);
  }

  // layernorm
  {
    Tensor x = rand_tensor({3, 5}, -1.0, 1.0, rng);
    Tensor gamma = rand_tensor({5}, 0.5, 1.5, rng);
    Tensor beta = rand_tensor({5}, -0.5, 0.5, rng);
    Tensor m = rand_tensor({3, 5}, -1.0, 1.0, rng);
    s.add("grad.layernorm.x",
          diff::gradcheck(
              [&](const Tensor& v) {
                return diff::mean(diff::mul(diff::layernorm(v, gamma, beta), m));
              },
              x),
          tol);
    s.add("grad.layernorm.gamma",
          diff::gradcheck(
              [&](const Tensor& v) {
                return diff::mean(diff::mul(diff::layernorm(x, v, beta), m));
              },
              gamma),
          tol);
    s.add("grad.layernorm.beta",
          diff::gradcheck(
              [&](const Tensor& v) {
                return diff::mean(diff::mul(diff::layernorm(x, gamma, v), m));
              },
              beta),
          tol);
  }

  // bilinear sampling w.r.t. source and coordinates
  {
    Tensor src = rand_tensor({2, 6, 7}, -1.0, 1.0, rng);
    Tensor coords_x = rand_tensor({1, 4, 5}, 0.2, 5.8, rng);
    Tensor coords_y = rand_tensor({1, 4, 5}, 0.2, 4.8, rng);
    Tensor coords = diff::concat_channels({coords_x, coords_y});
    s.add("grad.bilinear.src",
          diff::gradcheck(
              [&](const Tensor& v) { return frame_loss(diff::bilinear_sample(v, coords)); },
              src),
          tol);
    s.add("grad.bilinear.coords",
          diff::gradcheck(
              [&](const Tensor& v) { return frame_loss(diff::bilinear_sample(src, v)); },
              coords),
          tol);
  }

  // pooling
  {
    Tensor x = rand_tensor({2, 6, 6}, 0.0, 1.0, rng);
    s.add("grad.maxpool2d",
          diff::gradcheck(
              [](const Tensor& v) { return frame_loss(diff::maxpool2d(v, 2)); }, x),
          tol);
    s.add("grad.global_avgpool",
          diff::gradcheck(
              [](const Tensor& v) { return frame_loss(diff::global_avgpool(v)); }, x),
          tol);
    s.add("grad.pool_mean_h",
          diff::gradcheck(
              [](const Tensor& v) { return frame_loss(diff::pool_mean_keep(v, 1)); }, x),
          tol);
    s.add("grad.roll2d",
          diff::gradcheck(
              [](const Tensor& v) { return frame_loss(diff::roll2d(v, 2, 3)); }, x),
          tol);
    s.add("grad.upsample_nearest2",
          diff::gradcheck(
              [](const Tensor& v) { return frame_loss(diff::upsample_nearest2(v)); }, x),
          tol);
  }

  // many-to-many splat fusion w.r.t. every differentiable input
  {
    SplatFixture fx(rng);
    auto run = [&fx](const Tensor& i0, const Tensor& alpha,
                     const std::vector<Tensor>& f01, const Tensor& b0,
                     const Tensor& s0) {
      warp::MultiFlowSet fs;
      fs.f01 = f01;
      fs.f10 = fx.f10;
      fs.s0 = s0;
      fs.s1 = fx.s1;
      warp::FusionConfig cfg = warp::FusionConfig::defaults();
      cfg.alpha = alpha;
      return frame_loss(
          warp::m2m_splat_fuse(i0, fx.i1, fs, b0, fx.b1, cfg, fx.t).frame);
    };
    s.add("grad.splat.colors",
          diff::gradcheck(
              [&](const Tensor& v) { return run(v, fx.alpha, fx.f01, fx.b0, fx.s0); },
              fx.i0),
          tol);
    s.add("grad.splat.flow",
          diff::gradcheck(
              [&](const Tensor& v) {
                std::vector<Tensor> f01 = {v, fx.f01[1]};
                return run(fx.i0, fx.alpha, f01, fx.b0, fx.s0);
              },
              fx.f01[0]),
          tol);
    s.add("grad.splat.reliability",
          diff::gradcheck(
              [&](const Tensor& v) { return run(fx.i0, fx.alpha, fx.f01, fx.b0, v); },
              fx.s0),
          tol);
    s.add("grad.splat.brightness",
          diff::gradcheck(
              [&](const Tensor& v) { return run(fx.i0, fx.alpha, fx.f01, v, fx.s0); },
              fx.b0),
          tol);
    s.add("grad.splat.alpha",
          diff::gradcheck(
              [&](const Tensor& v) { return run(fx.i0, v, fx.f01, fx.b0, fx.s0); },
              fx.alpha),
          tol);
  }

  // error splatting through the error loss
  {
    SplatFixture fx(rng);
    const int hw = 8;
    std::vector<Tensor> e0, e1;
    for (int i = 0; i < fx.n; ++i) {
      e0.push_back(rand_tensor({hw, hw}, 0.1, 0.9, rng));
      e1.push_back(rand_tensor({hw, hw}, 0.1, 0.9, rng));
    }
    Tensor target = rand_tensor({hw, hw}, 0.0, 1.0, rng);
    s.add("grad.splat_error.err_loss",
          diff::gradcheck(
              [&](const Tensor& v) {
                std::vector<Tensor> errs0 = {v, e0[1]};
                Tensor et = diff::reshape(
                    warp::splat_error(errs0, e1, fx.flows(), fx.b0, fx.b1,
                                      fx.config(), fx.t)
                        .frame,
                    {hw, hw});
                return ssr::err_loss(et, target);
              },
              e0[0]),
          tol);
  }

  // low-rank modulation block
  {
    std::mt19937_64 prng(seed + 17);
    auto ps = lowrank::ProjectorSet::make(3, 6, 8, 8, prng);
    Tensor x = rand_tensor({6, 8, 8}, -1.0, 1.0, rng);
    s.add("grad.lowrank.x",
          diff::gradcheck(
              [&ps](const Tensor& v) { return frame_loss(lowrank::low_rank_modulate(v, ps)); },
              x),
          tol);
    s.add("grad.lowrank.projector_w",
          diff::gradcheck(
              [&](const Tensor& v) {
                lowrank::ProjectorSet p2 = ps;
                p2.channel[0].w1 = v;
                return frame_loss(lowrank::low_rank_modulate(x, p2));
              },
              ps.channel[0].w1),
          tol);
  }

  // window mixers and the refinement network
  {
    std::mt19937_64 prng(seed + 31);
    auto wp = mixer::WMixerParams::make(16, 5, prng);
    Tensor x = rand_tensor({16, 5}, -1.0, 1.0, rng);
    s.add("grad.token_mix.x",
          diff::gradcheck(
              [&wp](const Tensor& v) { return frame_loss(mixer::token_mix(v, wp)); }, x),
          tol);
    s.add("grad.token_mix.w1",
          diff::gradcheck(
              [&](const Tensor& v) {
                mixer::WMixerParams p2 = wp;
                p2.tok_w1 = v;
                return frame_loss(mixer::token_mix(x, p2));
              },
              wp.tok_w1),
          tol);
    s.add("grad.channel_mix.x",
          diff::gradcheck(
              [&wp](const Tensor& v) { return frame_loss(mixer::channel_mix(v, wp)); }, x),
          tol);

    auto bp = mixer::WMixerParams::make(16, 4, prng);
    mixer::WindowSpec spec;
    spec.window_side = 4;
    spec.shift = 2;
    Tensor xb = rand_tensor({4, 8, 8}, -1.0, 1.0, rng);
    s.add("grad.w_mixer_block.x",
          diff::gradcheck(
              [&](const Tensor& v) { return frame_loss(mixer::w_mixer_block(v, spec, bp)); },
              xb),
          tol);

    auto sp = mixer::SMBParams::make(3, 4, 4, 4, prng);
    Tensor xs = rand_tensor({3, 8, 8}, -1.0, 1.0, rng);
    Tensor ctx = rand_tensor({4, 8, 8}, -1.0, 1.0, rng);
    s.add("grad.smb_forward.x",
          diff::gradcheck(
              [&](const Tensor& v) { return frame_loss(mixer::smb_forward(v, ctx, sp)); },
              xs),
          tol);

    mixer::PRNConfig cfg = mixer::PRNConfig::toy(8);
    auto prn = mixer::PRNParams::make(cfg, 3, prng);
    prn.head_w = rand_tensor({3, cfg.channels[0], 3, 3}, -0.1, 0.1, rng);
    prn.head_w.set_requires_grad(true);
    mixer::FeaturePyramid p0, p1;
    for (int l = 0; l < cfg.levels; ++l) {
      int side = cfg.patch_side >> l;
      int ch = cfg.context_channels(l, 3);
      p0.levels.push_back(rand_tensor({ch, side, side}, -0.5, 0.5, rng));
      p1.levels.push_back(rand_tensor({ch, side, side}, -0.5, 0.5, rng));
    }
    Tensor initial = rand_tensor({3, 8, 8}, 0.2, 0.8, rng);
    s.add("grad.prn_refine_patch.initial",
          diff::gradcheck(
              [&](const Tensor& v) {
                return frame_loss(mixer::prn_refine_patch(p0, p1, v, prn));
              },
              initial),
          tol);
  }

  return s.results;
}

std::vector<CheckResult> property_suite(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Suite s;

  // primitive identities
  s.add("prop.gelu_zero", std::fabs(diff::gelu(Tensor::scalar(0.0)).value()), 0.0);
  s.add("prop.sigmoid_zero",
        std::fabs(diff::sigmoid(Tensor::scalar(0.0)).value() - 0.5), 0.0);
  {
    Tensor x = Tensor::full({5}, 3.7);
    Tensor out = diff::layernorm(x, Tensor::full({5}, 1.0), Tensor::zeros({5}));
    double worst = 0.0;
    for (double v : out.data()) worst = std::max(worst, std::fabs(v));
    s.add("prop.layernorm_const_zero", worst, 1e-12);
  }
  {
    Tensor src = rand_tensor({2, 5, 6}, -1.0, 1.0, rng);
    std::vector<double> cd = {3.0, 0.0, 5.0, 2.0, 4.0, 1.0};  // integer coords
    Tensor coords = Tensor::from_data({2, 1, 3}, cd);
    Tensor out = diff::bilinear_sample(src, coords);
    bool ok = true;
    for (int ch = 0; ch < 2; ++ch) {
      ok = ok && out.at({ch, 0, 0}) == src.at({ch, 2, 3});
      ok = ok && out.at({ch, 0, 1}) == src.at({ch, 4, 0});
      ok = ok && out.at({ch, 0, 2}) == src.at({ch, 1, 5});
    }
    s.add_bool("prop.bilinear_integer_bitwise", ok);
  }

  // backward linearity of add/mul combinations
  {
    Tensor x = rand_tensor({8}, -1.0, 1.0, rng);
    Tensor wf = rand_tensor({8}, -1.0, 1.0, rng);
    Tensor wg = rand_tensor({8}, -1.0, 1.0, rng);
    const double a = 1.7, b = -0.6;
    auto grad_of = [&x](auto fn) {
      Tensor v = x.detached_copy();
      v.set_requires_grad(true);
      Tape tape;
      tape.backward(fn(v));
      return tape.grad(v);
    };
    Tensor gf = grad_of([&wf](const Tensor& v) { return diff::sum(diff::mul(v, wf)); });
    Tensor gg = grad_of([&wg](const Tensor& v) { return diff::sum(diff::mul(v, wg)); });
    Tensor gc = grad_of([&](const Tensor& v) {
      return diff::add(diff::scale(diff::sum(diff::mul(v, wf)), a),
                       diff::scale(diff::sum(diff::mul(v, wg)), b));
    });
    double worst = 0.0;
    for (int i = 0; i < 8; ++i)
      worst = std::max(worst, std::fabs(gc.data()[i] - (a * gf.data()[i] + b * gg.data()[i])));
    s.add("prop.backward_linearity", worst, 1e-12);
  }

  // identical graphs run twice are bitwise identical (values and grads)
  {
    Tensor x = rand_tensor({4, 4}, -1.0, 1.0, rng);
    auto run = [&x]() {
      Tensor v = x.detached_copy();
      v.set_requires_grad(true);
      Tape tape;
      Tensor y = diff::mean(diff::mul(diff::gelu(v), diff::sigmoid(v)));
      tape.backward(y);
      return std::make_pair(y.value(), tape.grad(v));
    };
    auto [y1, g1] = run();
    auto [y2, g2] = run();
    bool ok = std::memcmp(&y1, &y2, sizeof(double)) == 0 && bits_equal(g1, g2);
    s.add_bool("prop.graph_determinism_bitwise", ok);
  }

  // Adam behavior
  {
    diff::AdamConfig cfg;
    cfg.lr = 1e-3;
    cfg.weight_decay = 0.0;
    std::vector<Tensor> params = {Tensor::full({3}, 0.5)};
    std::vector<Tensor> grads = {Tensor::zeros({3})};
    diff::AdamState st;
    diff::adam_step(params, grads, st, cfg);
    double worst = 0.0;
    for (double v : params[0].data()) worst = std::max(worst, std::fabs(v - 0.5));
    s.add("prop.adam.zero_grad_fixed", worst, 0.0);

    cfg.weight_decay = 1e-4;
    params = {Tensor::full({1}, 2.0)};
    std::vector<Tensor> zgrad = {Tensor::zeros({1})};
    diff::AdamState st2;
    diff::adam_step(params, zgrad, st2, cfg);
    s.add("prop.adam.decoupled_decay",
          std::fabs(params[0].value() - 2.0 * (1.0 - cfg.lr * 1e-4)), 1e-15);

    cfg.weight_decay = 0.0;
    params = {Tensor::scalar(1.0)};
    std::vector<Tensor> g = {Tensor::scalar(0.37)};
    diff::AdamState st3;
    double prev = params[0].value();
    double step_size = 0.0;
    for (int i = 0; i < 50; ++i) {
      diff::adam_step(params, g, st3, cfg);
      step_size = prev - params[0].value();
      prev = params[0].value();
    }
    s.add("prop.adam.const_grad_step_to_lr", std::fabs(step_size - cfg.lr),
          1e-6 * cfg.lr);
  }

  // flow scaling and temporal relevance
  {
    warp::MultiFlowSet fs;
    fs.f01 = {Tensor::from_data({2, 1, 1}, {2.0, -4.0})};
    fs.f10 = {Tensor::from_data({2, 1, 1}, {1.0, 1.0})};
    fs.s0 = Tensor::full({1, 1}, 1.0);
    fs.s1 = Tensor::full({1, 1}, 1.0);
    warp::MultiFlowSet at = warp::scale_flows(fs, 0.25);
    double worst = std::fabs(at.f01[0].data()[0] - 0.5);
    worst = std::max(worst, std::fabs(at.f01[0].data()[1] + 1.0));
    worst = std::max(worst, std::fabs(at.f10[0].data()[0] - 0.75));
    worst = std::max(worst, std::fabs(at.f10[0].data()[1] - 0.75));
    warp::MultiFlowSet half = warp::scale_flows(fs, 0.5);
    worst = std::max(worst, std::fabs(half.f01[0].data()[0] - 1.0));
    worst = std::max(worst, std::fabs(half.f10[0].data()[0] - 0.5));
    s.add("prop.scale_flows_examples", worst, 1e-15);
    s.add("prop.temporal_relevance",
          std::fabs(warp::temporal_relevance(0, 0.25) - 0.75) +
              std::fabs(warp::temporal_relevance(1, 0.25) - 0.25) +
              std::fabs(warp::temporal_relevance(0, 0.5) - 0.5),
          1e-15);
  }

  // fusion identities
  {
    // single contributor on an integer target reproduces its value
    warp::FusionConfig cfg = warp::FusionConfig::defaults();
    std::vector<warp::SplatGroup> g;
    Tensor val = rand_tensor({3, 1, 1}, 0.0, 1.0, rng);
    g.push_back({val, Tensor::zeros({2, 1, 1}), Tensor::full({1, 1}, -1.2),
                 Tensor::full({1, 1}, 0.7), 0.75});
    warp::SplatOutput out = warp::splat_groups(g, cfg, 0.0);
    s.add("prop.splat.single_contributor", max_abs_diff(out.frame, val), 1e-12);

    // two contributors, b = 0 and -3, equal r: (c1 + e^-3 c2) / (1 + e^-3)
    Tensor c1 = rand_tensor({3, 1, 1}, 0.0, 1.0, rng);
    Tensor c2 = rand_tensor({3, 1, 1}, 0.0, 1.0, rng);
    std::vector<warp::SplatGroup> g2;
    g2.push_back({c1, Tensor::zeros({2, 1, 1}), Tensor::zeros({1, 1}),
                  Tensor::full({1, 1}, 1.0), 0.5});
    g2.push_back({c2, Tensor::zeros({2, 1, 1}), Tensor::full({1, 1}, -3.0),
                  Tensor::full({1, 1}, 1.0), 0.5});
    warp::SplatOutput out2 = warp::splat_groups(g2, cfg, 0.0);
    double e3 = std::exp(-3.0);
    double worst = 0.0;
    for (int ch = 0; ch < 3; ++ch) {
      double expect = (c1.data()[ch] + e3 * c2.data()[ch]) / (1.0 + e3);
      worst = std::max(worst, std::fabs(out2.frame.data()[ch] - expect));
    }
    s.add("prop.splat.two_contributors", worst, 1e-12);
  }
  {
    // zero-flow identity with I0 = I1
    const int hw = 12;
    Tensor img = rand_tensor({3, hw, hw}, 0.0, 1.0, rng);
    warp::MultiFlowSet fs;
    for (int i = 0; i < 2; ++i) {
      fs.f01.push_back(Tensor::zeros({2, hw, hw}));
      fs.f10.push_back(Tensor::zeros({2, hw, hw}));
    }
    fs.s0 = rand_tensor({hw, hw}, 0.2, 1.0, rng);
    fs.s1 = rand_tensor({hw, hw}, 0.2, 1.0, rng);
    Tensor b0 = rand_tensor({hw, hw}, -1.0, 0.0, rng);
    Tensor b1 = rand_tensor({hw, hw}, -1.0, 0.0, rng);
    warp::FusionConfig cfg = warp::FusionConfig::defaults();
    warp::SplatOutput out =
        warp::m2m_splat_fuse(img, img, fs, b0, b1, cfg, 0.3);
    s.add("prop.splat.zero_flow_identity", max_abs_diff(out.frame, img), 1e-12);

    // constant frame preservation under arbitrary flows
    Tensor konst = Tensor::full({3, hw, hw}, 0.42);
    warp::MultiFlowSet fs2;
    for (int i = 0; i < 2; ++i) {
      fs2.f01.push_back(rand_tensor({2, hw, hw}, -3.0, 3.0, rng));
      fs2.f10.push_back(rand_tensor({2, hw, hw}, -3.0, 3.0, rng));
    }
    fs2.s0 = fs.s0;
    fs2.s1 = fs.s1;
    warp::SplatOutput out2 =
        warp::m2m_splat_fuse(konst, konst, fs2, b0, b1, cfg, 0.3);
    double worst = 0.0;
    const std::int64_t plane = static_cast<std::int64_t>(hw) * hw;
    for (std::int64_t p = 0; p < plane; ++p) {
      if (out2.holes[p]) continue;
      for (int ch = 0; ch < 3; ++ch)
        worst = std::max(worst,
                         std::fabs(out2.frame.data()[ch * plane + p] - 0.42));
    }
    s.add("prop.splat.constant_preservation", worst, 1e-9);

    // shifting every exponent by a constant leaves the fusion unchanged
    Tensor img2 = rand_tensor({3, hw, hw}, 0.0, 1.0, rng);
    warp::MultiFlowSet fs3 = fs2;
    fs3.s0 = Tensor::full({hw, hw}, 1.0);
    fs3.s1 = Tensor::full({hw, hw}, 1.0);
    warp::SplatOutput base =
        warp::m2m_splat_fuse(img, img2, fs3, b0, b1, cfg, 0.3);
    warp::SplatOutput shifted = warp::m2m_splat_fuse(
        img, img2, fs3, diff::add_scalar(b0, -2.5), diff::add_scalar(b1, -2.5),
        cfg, 0.3);
    s.add("prop.splat.exponent_shift_invariance",
          max_abs_diff(base.frame, shifted.frame), 1e-9);
  }

  // hole filling
  {
    const int hw = 6;
    Tensor i0 = rand_tensor({3, hw, hw}, 0.0, 1.0, rng);
    Tensor i1 = rand_tensor({3, hw, hw}, 0.0, 1.0, rng);
    warp::MultiFlowSet fs;
    fs.f01 = {Tensor::full({2, hw, hw}, 1000.0)};  // everything lands outside
    fs.f10 = {Tensor::full({2, hw, hw}, 1000.0)};
    fs.s0 = Tensor::full({hw, hw}, 1.0);
    fs.s1 = Tensor::full({hw, hw}, 1.0);
    Tensor b = Tensor::zeros({hw, hw});
    warp::FusionConfig cfg = warp::FusionConfig::defaults();
    warp::SplatOutput out = warp::m2m_splat_fuse(i0, i1, fs, b, b, cfg, 0.5);
    s.add_bool("prop.fill_holes.all_hole", out.hole_ratio == 1.0);
    Tensor filled = warp::fill_holes(out, i0, i1, 0.5,
                                     warp::HolePolicy::blend_inputs);
    Tensor expect =
        diff::add(diff::scale(i0, 0.5), diff::scale(i1, 0.5));
    s.add("prop.fill_holes.blend", max_abs_diff(filled, expect), 1e-15);
  }

  // window partition round trips, zero-weight identities
  {
    Tensor x = rand_tensor({3, 8, 8}, -1.0, 1.0, rng);
    for (int shift : {0, 2}) {
      mixer::WindowSpec spec;
      spec.window_side = 4;
      spec.shift = shift;
      auto windows = mixer::window_partition(x, spec);
      Tensor back = mixer::window_merge(windows, spec, 3, 8);
      s.add_bool("prop.window_roundtrip_shift" + std::to_string(shift),
                 bits_equal(back, x));
    }
    auto zp = mixer::WMixerParams::zeros(16, 3);
    Tensor table = rand_tensor({16, 3}, -1.0, 1.0, rng);
    s.add_bool("prop.token_mix.zero_identity",
               bits_equal(mixer::token_mix(table, zp), table));
    s.add_bool("prop.channel_mix.zero_identity",
               bits_equal(mixer::channel_mix(table, zp), table));
    mixer::WindowSpec spec;
    spec.window_side = 4;
    spec.shift = 0;
    s.add_bool("prop.w_mixer.zero_identity",
               bits_equal(mixer::w_mixer_block(x, spec, zp), x));
  }

  // pyramid structure
  {
    std::mt19937_64 prng(seed + 5);
    mixer::PRNConfig cfg = mixer::PRNConfig::toy(16);
    auto ctx = mixer::ContextEncoderParams::make(cfg, 3, prng);
    Tensor img = rand_tensor({3, 64, 64}, 0.0, 1.0, rng);
    mixer::FeaturePyramid pyr = mixer::build_context_pyramid(img, ctx);
    bool shapes_ok = pyr.levels.size() == 4;
    int expect_side = 64;
    for (std::size_t l = 0; l < pyr.levels.size(); ++l) {
      shapes_ok = shapes_ok && pyr.levels[l].dim(1) == expect_side &&
                  pyr.levels[l].dim(2) == expect_side;
      expect_side /= 2;
    }
    s.add_bool("prop.pyramid.level_shapes", shapes_ok);
    s.add_bool("prop.pyramid.level0_bitwise", bits_equal(pyr.levels[0], img));

    Tensor flat = Tensor::full({3, 64, 64}, 0.31);
    mixer::FeaturePyramid fp = mixer::build_context_pyramid(flat, ctx);
    double worst = 0.0;
    for (std::size_t l = 1; l < fp.levels.size(); ++l) {
      const Tensor& lv = fp.levels[l];
      int lc = lv.dim(0), lh = lv.dim(1), lw = lv.dim(2);
      for (int ch = 0; ch < lc; ++ch) {
        double center = lv.at({ch, lh / 2, lw / 2});
        for (int y = 1; y + 1 < lh; ++y)
          for (int xx = 1; xx + 1 < lw; ++xx)
            worst = std::max(worst, std::fabs(lv.at({ch, y, xx}) - center));
      }
    }
    s.add("prop.pyramid.constant_interior", worst, 1e-12);
  }

  // refinement no-op with a zero-initialized head
  {
    std::mt19937_64 prng(seed + 7);
    mixer::PRNConfig cfg = mixer::PRNConfig::toy(8);
    auto prn = mixer::PRNParams::make(cfg, 3, prng);
    mixer::FeaturePyramid p0, p1;
    for (int l = 0; l < cfg.levels; ++l) {
      int side = cfg.patch_side >> l;
      int ch = cfg.context_channels(l, 3);
      p0.levels.push_back(rand_tensor({ch, side, side}, -0.5, 0.5, rng));
      p1.levels.push_back(rand_tensor({ch, side, side}, -0.5, 0.5, rng));
    }
    Tensor initial = rand_tensor({3, 8, 8}, 0.0, 1.0, rng);
    Tensor refined = mixer::prn_refine_patch(p0, p1, initial, prn);
    s.add_bool("prop.prn.zero_head_noop", bits_equal(refined, initial));
  }

  // low-rank block basics
  {
    std::mt19937_64 prng(seed + 9);
    auto ps = lowrank::ProjectorSet::make(4, 8, 16, 16, prng);
    Tensor x = rand_tensor({8, 16, 16}, -1.0, 1.0, rng);
    lowrank::Projections pr = lowrank::project_dims(x, ps);
    s.add_bool("prop.lowrank.shapes",
               pr.u.shape() == diff::Shape{4, 8} &&
                   pr.v.shape() == diff::Shape{4, 16} &&
                   pr.w.shape() == diff::Shape{4, 16});

    // zero-weight stages land on sigmoid(0) = 0.5 everywhere
    lowrank::ProjectorSet zs = ps;
    for (auto* group : {&zs.channel, &zs.height, &zs.width})
      for (lowrank::Projector& p : *group) {
        p.w1 = Tensor::zeros(p.w1.shape());
        p.b1 = Tensor::zeros(p.b1.shape());
        p.w2 = Tensor::zeros(p.w2.shape());
        p.b2 = Tensor::zeros(p.b2.shape());
      }
    lowrank::Projections zp = lowrank::project_dims(x, zs);
    double worst = 0.0;
    for (double v : zp.u.data()) worst = std::max(worst, std::fabs(v - 0.5));
    for (double v : zp.v.data()) worst = std::max(worst, std::fabs(v - 0.5));
    for (double v : zp.w.data()) worst = std::max(worst, std::fabs(v - 0.5));
    Tensor t = lowrank::rank1_compose(zp.u, zp.v, zp.w);
    for (double v : t.data()) worst = std::max(worst, std::fabs(v - 0.125));
    s.add("prop.lowrank.zero_weights_half", worst, 0.0);

    // M=1 composition matches the outer-product definition
    Tensor u1 = rand_tensor({1, 3}, 0.1, 0.9, rng);
    Tensor v1 = rand_tensor({1, 4}, 0.1, 0.9, rng);
    Tensor w1 = rand_tensor({1, 5}, 0.1, 0.9, rng);
    Tensor t1 = lowrank::rank1_compose(u1, v1, w1);
    worst = 0.0;
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 4; ++y)
        for (int xx = 0; xx < 5; ++xx)
          worst = std::max(worst, std::fabs(t1.at({c, y, xx}) -
                                            u1.data()[c] * v1.data()[y] *
                                                w1.data()[xx]));
    s.add("prop.lowrank.rank1_definition", worst, 1e-15);

    // modulation never amplifies
    Tensor mod = lowrank::low_rank_modulate(x, ps);
    bool ok = true;
    for (std::int64_t i = 0; i < x.numel(); ++i)
      ok = ok && std::fabs(mod.data()[i]) <= std::fabs(x.data()[i]);
    s.add_bool("prop.lowrank.non_amplifying", ok);
    s.add_bool("prop.lowrank.ones_identity",
               bits_equal(lowrank::modulate(x, Tensor::full(x.shape(), 1.0)), x));
  }

  // selective refinement basics
  {
    Tensor it = rand_tensor({3, 16, 16}, 0.0, 1.0, rng);
    Tensor gt = rand_tensor({3, 16, 16}, 0.0, 1.0, rng);
    Tensor target = ssr::error_target(it, it);
    double worst = 0.0;
    for (double v : target.data()) worst = std::max(worst, std::fabs(v));
    s.add("prop.ssr.error_target_zero", worst, 0.0);
    s.add("prop.ssr.err_loss_zero",
          std::fabs(ssr::err_loss(target, target).value()), 0.0);
    s.add("prop.ssr.err_loss_one",
          std::fabs(ssr::err_loss(Tensor::zeros({4, 4}),
                                  Tensor::full({4, 4}, 1.0))
                        .value() -
                    1.0),
          1e-15);
    s.add("prop.ssr.charbonnier_floor",
          std::fabs(ssr::charbonnier_loss(it, it).value() - 1e-6), 1e-18);

    Tensor em = Tensor::from_data({2, 2}, {0.9, 0.1, 0.2, 0.8});
    ssr::PatchSelection sel = ssr::select_top_p(em, 0.5, 4);
    bool ok = sel.picks.size() == 2 && sel.picks[0] == std::make_pair(0, 0) &&
              sel.picks[1] == std::make_pair(1, 1);
    s.add_bool("prop.ssr.select_example", ok);
    s.add_bool("prop.ssr.select_empty",
               ssr::select_top_p(em, 0.0, 4).picks.empty());
    ssr::PatchSelection tie =
        ssr::select_top_p(Tensor::full({2, 2}, 0.5), 0.25, 4);
    s.add_bool("prop.ssr.select_tie_rule",
               tie.picks.size() == 1 && tie.picks[0] == std::make_pair(0, 0));

    ssr::PatchSelection all = ssr::select_top_p(
        ssr::downsample_error(ssr::error_target(it, gt), 4), 1.0, 4);
    Tensor pasted = ssr::paste_patches(it, ssr::crop_patches(it, all), all);
    s.add_bool("prop.ssr.crop_paste_identity", bits_equal(pasted, it));
  }

  // metrics
  {
    Tensor a = rand_tensor({3, 16, 16}, 0.0, 1.0, rng);
    s.add("prop.psnr.identical_cap", std::fabs(metrics::psnr(a, a) - 99.0), 0.0);
    s.add("prop.psnr.zero_vs_one",
          std::fabs(metrics::psnr(Tensor::zeros({3, 16, 16}),
                                  Tensor::full({3, 16, 16}, 1.0))),
          1e-12);
    Tensor b = diff::add_scalar(Tensor::zeros({3, 16, 16}), 0.1);
    s.add("prop.psnr.mse_20db",
          std::fabs(metrics::psnr(Tensor::zeros({3, 16, 16}), b) - 20.0), 1e-9);
    s.add("prop.ssim.identical", std::fabs(metrics::ssim(a, a) - 1.0), 1e-12);
    Tensor inv = diff::add_scalar(diff::neg(a), 1.0);
    s.add_bool("prop.ssim.dissimilar", metrics::ssim(a, inv) < 1.0);
  }

  // format round trips through temporary files
  {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() /
                   ("m2m_selftest_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    std::uniform_real_distribution<float> fdist(-8.0f, 8.0f);
    std::vector<double> fd(2 * 6 * 5);
    for (double& v : fd) v = static_cast<double>(fdist(rng));
    Tensor flow = Tensor::from_data({2, 6, 5}, fd);
    std::string fpath = (dir / "check.flo").string();
    io::write_flo(fpath, flow);
    s.add_bool("prop.io.flo_roundtrip_bitwise",
               bits_equal(io::read_flo(fpath), flow));

    std::uniform_int_distribution<int> byte(0, 255);
    std::vector<double> id(3 * 7 * 9);
    for (double& v : id) v = byte(rng) / 255.0;
    Tensor img = Tensor::from_data({3, 7, 9}, id);
    std::string ppath = (dir / "check.ppm").string();
    io::write_ppm(ppath, img);
    s.add_bool("prop.io.ppm_roundtrip_bitwise",
               bits_equal(io::read_ppm(ppath), img));
    std::string gpath = (dir / "check.png").string();
    io::write_png(gpath, img);
    s.add_bool("prop.io.png_roundtrip_bitwise",
               bits_equal(io::read_png(gpath), img));

    bool caught = false;
    try {
      std::ofstream bad(dir / "bad.flo", std::ios::binary);
      float wrong = 1.0f;
      bad.write(reinterpret_cast<const char*>(&wrong), 4);
      std::int32_t dims[2] = {2, 2};
      bad.write(reinterpret_cast<const char*>(dims), 8);
      bad.close();
      io::read_flo((dir / "bad.flo").string());
    } catch (const io::flo_error& e) {
      caught = e.kind() == io::FloErrorKind::bad_magic;
    }
    s.add_bool("prop.io.flo_bad_magic", caught);

    caught = false;
    try {
      std::ofstream trunc(dir / "trunc.flo", std::ios::binary);
      float magic = 202021.25f;
      trunc.write(reinterpret_cast<const char*>(&magic), 4);
      std::int32_t dims[2] = {4, 4};
      trunc.write(reinterpret_cast<const char*>(dims), 8);
      float partial[3] = {0.0f, 1.0f, 2.0f};
      trunc.write(reinterpret_cast<const char*>(partial), 12);
      trunc.close();
      io::read_flo((dir / "trunc.flo").string());
    } catch (const io::flo_error& e) {
      caught = e.kind() == io::FloErrorKind::truncated;
    }
    s.add_bool("prop.io.flo_truncated", caught);

    pipe::RunManifest m;
    m.set("alpha", 1.0);
    m.set("count", static_cast<std::uint64_t>(7));
    m.set("name", std::string("check"));
    std::string text = m.serialize();
    s.add_bool("prop.manifest.roundtrip",
               pipe::RunManifest::parse(text).serialize() == text);
    fs::remove_all(dir);
  }

  return s.results;
}

bool all_pass(const std::vector<CheckResult>& results) {
  for (const CheckResult& r : results)
    if (!r.pass) return false;
  return true;
}

}  // namespace m2m::check
