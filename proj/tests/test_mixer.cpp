#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "m2m/adam.hpp"
#include "m2m/gradcheck.hpp"
#include "m2m/interpolate.hpp"
#include "m2m/mixer.hpp"
#include "m2m/ops.hpp"
#include "m2m/ssr.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using m2m::diff::Tensor;
using namespace m2m;
using testutil::bits_equal;
using testutil::max_abs_diff;
using testutil::rand_tensor;

TEST_CASE("window partition shapes and identities") {
  std::mt19937_64 rng(41);
  Tensor x = rand_tensor({3, 8, 8}, -1.0, 1.0, rng);

  SUBCASE("K=8, Q=16 gives 4 windows of 16 tokens") {
    mixer::WindowSpec spec;
    spec.window_side = 4;
    auto windows = mixer::window_partition(x, spec);
    CHECK(windows.size() == 4);
    for (const Tensor& w : windows)
      CHECK(w.shape() == m2m::diff::Shape{16, 3});
  }
  SUBCASE("round trip is bitwise with and without shift") {
    for (int shift : {0, 2}) {
      mixer::WindowSpec spec;
      spec.window_side = 4;
      spec.shift = shift;
      Tensor back =
          mixer::window_merge(mixer::window_partition(x, spec), spec, 3, 8);
      CHECK(bits_equal(back, x));
    }
  }
  SUBCASE("constant input yields identical windows") {
    mixer::WindowSpec spec;
    spec.window_side = 4;
    Tensor c = Tensor::full({2, 8, 8}, 0.7);
    auto windows = mixer::window_partition(c, spec);
    for (std::size_t i = 1; i < windows.size(); ++i)
      CHECK(bits_equal(windows[i], windows[0]));
  }
  SUBCASE("divisibility violations are rejected") {
    mixer::WindowSpec spec;
    spec.window_side = 3;
    CHECK_THROWS_AS(mixer::window_partition(x, spec), std::invalid_argument);
    mixer::WindowSpec odd;
    odd.window_side = 4;
    odd.shift = 1;
    CHECK_THROWS_AS(mixer::window_partition(x, odd), std::invalid_argument);
  }
}

TEST_CASE("token and channel mixing") {
  std::mt19937_64 rng(42);
  auto p = mixer::WMixerParams::make(16, 5, rng);
  Tensor x = rand_tensor({16, 5}, -1.0, 1.0, rng);

  SUBCASE("zero weights reduce to the residual identity") {
    auto z = mixer::WMixerParams::zeros(16, 5);
    CHECK(bits_equal(mixer::token_mix(x, z), x));
    CHECK(bits_equal(mixer::channel_mix(x, z), x));
  }
  SUBCASE("token mixing is channel-wise parallel") {
    // permuting channels of X permutes U identically
    std::vector<int> perm = {4, 2, 0, 3, 1};
    std::vector<double> px(x.data().size());
    for (int q = 0; q < 16; ++q)
      for (int c = 0; c < 5; ++c) px[q * 5 + c] = x.data()[q * 5 + perm[c]];
    Tensor xp = Tensor::from_data({16, 5}, px);
    // layernorm params must be permuted along with the channels
    auto pp = p;
    auto permute_vec = [&](const Tensor& t) {
      std::vector<double> v(5);
      for (int c = 0; c < 5; ++c) v[c] = t.data()[perm[c]];
      return Tensor::from_data({5}, v);
    };
    pp.tok_gamma = permute_vec(p.tok_gamma);
    pp.tok_beta = permute_vec(p.tok_beta);
    Tensor u = mixer::token_mix(x, p);
    Tensor up = mixer::token_mix(xp, pp);
    for (int q = 0; q < 16; ++q)
      for (int c = 0; c < 5; ++c)
        CHECK(up.at({q, c}) ==
              doctest::Approx(u.at({q, perm[c]})).epsilon(1e-12));
  }
  SUBCASE("channel mixing is token-wise parallel") {
    // swapping two tokens swaps the corresponding output rows
    std::vector<double> px(x.data().begin(), x.data().end());
    for (int c = 0; c < 5; ++c) std::swap(px[3 * 5 + c], px[11 * 5 + c]);
    Tensor xp = Tensor::from_data({16, 5}, px);
    Tensor y = mixer::channel_mix(x, p);
    Tensor yp = mixer::channel_mix(xp, p);
    for (int c = 0; c < 5; ++c) {
      CHECK(yp.at({3, c}) == doctest::Approx(y.at({11, c})).epsilon(1e-12));
      CHECK(yp.at({11, c}) == doctest::Approx(y.at({3, c})).epsilon(1e-12));
    }
  }
  SUBCASE("gradcheck") {
    CHECK(diff::gradcheck(
              [&p](const Tensor& v) {
                Tensor y = mixer::token_mix(v, p);
                return diff::mean(diff::mul(y, y));
              },
              x) <= 1e-4);
    CHECK(diff::gradcheck(
              [&p](const Tensor& v) {
                Tensor y = mixer::channel_mix(v, p);
                return diff::mean(diff::mul(y, y));
              },
              x) <= 1e-4);
  }
}

TEST_CASE("w_mixer_block") {
  std::mt19937_64 rng(43);
  Tensor x = rand_tensor({4, 8, 8}, -1.0, 1.0, rng);

  SUBCASE("all-zero weights give the identity") {
    auto z = mixer::WMixerParams::zeros(16, 4);
    mixer::WindowSpec spec;
    spec.window_side = 4;
    spec.shift = 2;
    CHECK(bits_equal(mixer::w_mixer_block(x, spec, z), x));
  }
  SUBCASE("shifted windows change the result") {
    auto p = mixer::WMixerParams::make(16, 4, rng);
    mixer::WindowSpec plain;
    plain.window_side = 4;
    mixer::WindowSpec shifted = plain;
    shifted.shift = 2;
    Tensor a = mixer::w_mixer_block(x, plain, p);
    Tensor b = mixer::w_mixer_block(x, shifted, p);
    CHECK(max_abs_diff(a, b) > 1e-6);
  }
  SUBCASE("gradcheck on a shifted toy block") {
    auto p = mixer::WMixerParams::make(16, 4, rng);
    mixer::WindowSpec spec;
    spec.window_side = 4;
    spec.shift = 2;
    CHECK(diff::gradcheck(
              [&](const Tensor& v) {
                Tensor y = mixer::w_mixer_block(v, spec, p);
                return diff::mean(diff::mul(y, y));
              },
              x) <= 1e-4);
  }
}

TEST_CASE("smb_forward") {
  std::mt19937_64 rng(44);
  Tensor x = rand_tensor({3, 8, 8}, -1.0, 1.0, rng);
  Tensor ctx = rand_tensor({4, 8, 8}, -1.0, 1.0, rng);
  auto p = mixer::SMBParams::make(3, 4, 5, 4, rng);

  SUBCASE("zero mixers leave only the conv fusion") {
    auto pz = p;
    pz.mix1 = mixer::WMixerParams::zeros(16, 5);
    pz.mix2 = mixer::WMixerParams::zeros(16, 5);
    Tensor out = mixer::smb_forward(x, ctx, pz);
    Tensor conv_only =
        diff::conv2d_3x3(diff::concat_channels({x, ctx}), p.conv_w, p.conv_b, 1);
    CHECK(bits_equal(out, conv_only));
  }
  SUBCASE("shape preservation and misalignment errors") {
    Tensor out = mixer::smb_forward(x, ctx, p);
    CHECK(out.shape() == m2m::diff::Shape{5, 8, 8});
    CHECK_THROWS_AS(mixer::smb_forward(x, rand_tensor({4, 4, 4}, 0, 1, rng), p),
                    std::invalid_argument);
  }
  SUBCASE("gradcheck") {
    CHECK(diff::gradcheck(
              [&](const Tensor& v) {
                Tensor y = mixer::smb_forward(v, ctx, p);
                return diff::mean(diff::mul(y, y));
              },
              x) <= 1e-4);
  }
  SUBCASE("the two mixers run plain then shifted") {
    auto p1 = p;
    p1.mix1 = mixer::WMixerParams::zeros(16, 5);  // isolate the second mixer
    Tensor got = mixer::smb_forward(x, ctx, p1);
    Tensor conv =
        diff::conv2d_3x3(diff::concat_channels({x, ctx}), p.conv_w, p.conv_b, 1);
    mixer::WindowSpec shifted;
    shifted.window_side = 4;
    shifted.shift = 2;
    CHECK(bits_equal(got, mixer::w_mixer_block(conv, shifted, p1.mix2)));
    mixer::WindowSpec plain;
    plain.window_side = 4;
    Tensor unshifted = mixer::w_mixer_block(conv, plain, p1.mix2);
    CHECK(max_abs_diff(got, unshifted) > 1e-9);
  }
}

TEST_CASE("context pyramid structure") {
  std::mt19937_64 rng(45);
  mixer::PRNConfig cfg = mixer::PRNConfig::toy(16);
  auto ctx = mixer::ContextEncoderParams::make(cfg, 3, rng);

  SUBCASE("64x64 input halves to 8x8") {
    Tensor img = rand_tensor({3, 64, 64}, 0.0, 1.0, rng);
    mixer::FeaturePyramid pyr = mixer::build_context_pyramid(img, ctx);
    REQUIRE(pyr.levels.size() == 4);
    CHECK(pyr.levels[0].dim(1) == 64);
    CHECK(pyr.levels[1].dim(1) == 32);
    CHECK(pyr.levels[2].dim(1) == 16);
    CHECK(pyr.levels[3].dim(1) == 8);
    CHECK(bits_equal(pyr.levels[0], img));
  }
  SUBCASE("divisibility is required") {
    CHECK_THROWS_AS(
        mixer::build_context_pyramid(rand_tensor({3, 60, 64}, 0, 1, rng), ctx),
        std::invalid_argument);
  }
  SUBCASE("constant image gives constant interior features") {
    Tensor flat = Tensor::full({3, 32, 32}, 0.44);
    mixer::FeaturePyramid pyr = mixer::build_context_pyramid(flat, ctx);
    for (std::size_t l = 1; l < pyr.levels.size(); ++l) {
      const Tensor& lv = pyr.levels[l];
      for (int c = 0; c < lv.dim(0); ++c) {
        double center = lv.at({c, lv.dim(1) / 2, lv.dim(2) / 2});
        for (int y = 1; y + 1 < lv.dim(1); ++y)
          for (int x = 1; x + 1 < lv.dim(2); ++x)
            CHECK(lv.at({c, y, x}) == doctest::Approx(center).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("splat_pyramid") {
  std::mt19937_64 rng(46);
  mixer::PRNConfig cfg = mixer::PRNConfig::toy(16);
  auto ctx = mixer::ContextEncoderParams::make(cfg, 3, rng);
  Tensor i0 = rand_tensor({3, 32, 32}, 0.0, 1.0, rng);
  Tensor i1 = rand_tensor({3, 32, 32}, 0.0, 1.0, rng);
  mixer::FeaturePyramid pyr0 = mixer::build_context_pyramid(i0, ctx);
  mixer::FeaturePyramid pyr1 = mixer::build_context_pyramid(i1, ctx);
  warp::FusionConfig fcfg = warp::FusionConfig::defaults();

  SUBCASE("zero flows reproduce level 0 on non-hole pixels") {
    warp::MultiFlowSet fs;
    fs.f01 = {Tensor::zeros({2, 32, 32})};
    fs.f10 = {Tensor::zeros({2, 32, 32})};
    fs.s0 = Tensor::full({32, 32}, 1.0);
    fs.s1 = Tensor::full({32, 32}, 1.0);
    auto [w0, w1] = mixer::splat_pyramid(pyr0, pyr1, fs, 0.5, fcfg);
    CHECK(max_abs_diff(w0.levels[0], i0) <= 1e-12);
    CHECK(max_abs_diff(w1.levels[0], i1) <= 1e-12);
  }
  SUBCASE("production levels match the naive splat on the same inputs") {
    warp::MultiFlowSet fs;
    for (int i = 0; i < 2; ++i) {
      fs.f01.push_back(rand_tensor({2, 32, 32}, -3.0, 3.0, rng));
      fs.f10.push_back(rand_tensor({2, 32, 32}, -3.0, 3.0, rng));
    }
    fs.s0 = rand_tensor({32, 32}, 0.2, 1.0, rng);
    fs.s1 = rand_tensor({32, 32}, 0.2, 1.0, rng);
    const double t = 0.4;
    auto [w0, w1] = mixer::splat_pyramid(pyr0, pyr1, fs, t, fcfg);
    for (std::size_t l = 0; l < w0.levels.size(); ++l) {
      const int lh = pyr0.levels[l].dim(1), lw = pyr0.levels[l].dim(2);
      const double vs = 1.0 / static_cast<double>(1 << l);
      std::vector<Tensor> f01l, f10l;
      for (const Tensor& f : fs.f01)
        f01l.push_back(diff::scale(mixer::resize_bilinear(f, lh, lw), vs));
      for (const Tensor& f : fs.f10)
        f10l.push_back(diff::scale(mixer::resize_bilinear(f, lh, lw), vs));
      Tensor s0l = diff::reshape(
          mixer::resize_bilinear(diff::reshape(fs.s0, {1, 32, 32}), lh, lw),
          {lh, lw});
      Tensor s1l = diff::reshape(
          mixer::resize_bilinear(diff::reshape(fs.s1, {1, 32, 32}), lh, lw),
          {lh, lw});
      auto [b0l, b1l] = warp::brightness_consistency(
          pyr0.levels[l], pyr1.levels[l], warp::mean_flow(f01l),
          warp::mean_flow(f10l));
      std::vector<Tensor> scaled01, scaled10;
      for (const Tensor& f : f01l) scaled01.push_back(diff::scale(f, t));
      for (const Tensor& f : f10l) scaled10.push_back(diff::scale(f, 1.0 - t));
      std::vector<oracle::Group> g0, g1;
      for (const Tensor& f : scaled01)
        g0.push_back({&pyr0.levels[l], &f, &b0l, &s0l, 1.0 - t});
      for (const Tensor& f : scaled10)
        g1.push_back({&pyr1.levels[l], &f, &b1l, &s1l, t});
      oracle::SplatResult want0 =
          oracle::naive_splat(g0, 1.0, fcfg.weight_eps, 0.0);
      oracle::SplatResult want1 =
          oracle::naive_splat(g1, 1.0, fcfg.weight_eps, 0.0);
      for (std::int64_t i = 0; i < w0.levels[l].numel(); ++i)
        CHECK(std::fabs(w0.levels[l].data()[i] - want0.values[i]) <= 1e-10);
      for (std::int64_t i = 0; i < w1.levels[l].numel(); ++i)
        CHECK(std::fabs(w1.levels[l].data()[i] - want1.values[i]) <= 1e-10);
    }
  }
}

TEST_CASE("crop alignment geometry") {
  // upsampling a level-l crop window by 2^l reproduces the level-0 window
  const int k = 16;
  for (int r : {0, 1, 3})
    for (int c : {0, 2}) {
      int y0 = r * k, x0 = c * k;
      for (int l = 0; l < 4; ++l) {
        int off_y = y0 >> l, off_x = x0 >> l, side = k >> l;
        CHECK(off_y * (1 << l) == y0);
        CHECK(off_x * (1 << l) == x0);
        CHECK(side * (1 << l) == k);
      }
    }
}

TEST_CASE("prn_refine_patch") {
  std::mt19937_64 rng(47);
  mixer::PRNConfig cfg = mixer::PRNConfig::toy(8);
  auto prn = mixer::PRNParams::make(cfg, 3, rng);
  mixer::FeaturePyramid p0, p1;
  for (int l = 0; l < cfg.levels; ++l) {
    int side = cfg.patch_side >> l;
    int ch = cfg.context_channels(l, 3);
    p0.levels.push_back(rand_tensor({ch, side, side}, -0.5, 0.5, rng));
    p1.levels.push_back(rand_tensor({ch, side, side}, -0.5, 0.5, rng));
  }
  Tensor initial = rand_tensor({3, 8, 8}, 0.0, 1.0, rng);

  SUBCASE("zero-initialized head is a bitwise no-op") {
    CHECK(bits_equal(mixer::prn_refine_patch(p0, p1, initial, prn), initial));
  }
  SUBCASE("output stays in [0,1] with a live head") {
    prn.head_w = rand_tensor({3, cfg.channels[0], 3, 3}, -0.5, 0.5, rng);
    Tensor out = mixer::prn_refine_patch(p0, p1, initial, prn);
    for (double v : out.data()) CHECK((v >= 0.0 && v <= 1.0));
  }
  SUBCASE("misaligned crops are rejected") {
    mixer::FeaturePyramid bad = p0;
    bad.levels[2] = rand_tensor({cfg.channels[2], 3, 3}, 0, 1, rng);
    CHECK_THROWS_AS(mixer::prn_refine_patch(bad, p1, initial, prn),
                    std::invalid_argument);
  }
}

TEST_CASE("toy overfit: a single patch reaches 90% loss reduction") {
  std::mt19937_64 rng(48);
  mixer::PRNConfig cfg = mixer::PRNConfig::toy(8);
  auto prn = mixer::PRNParams::make(cfg, 3, rng);
  mixer::FeaturePyramid p0, p1;
  for (int l = 0; l < cfg.levels; ++l) {
    int side = cfg.patch_side >> l;
    int ch = cfg.context_channels(l, 3);
    p0.levels.push_back(rand_tensor({ch, side, side}, -0.5, 0.5, rng));
    p1.levels.push_back(rand_tensor({ch, side, side}, -0.5, 0.5, rng));
  }
  Tensor initial = rand_tensor({3, 8, 8}, 0.25, 0.75, rng);
  Tensor target = rand_tensor({3, 8, 8}, 0.25, 0.75, rng);

  std::vector<Tensor> params = prn.trainable();
  for (Tensor& p : params) p.set_requires_grad(true);
  m2m::diff::AdamConfig acfg;
  acfg.lr = 5e-3;
  m2m::diff::AdamState st;
  double first_loss = 0.0, last_loss = 0.0;
  for (int step = 0; step < 500; ++step) {
    m2m::diff::Tape tape;
    Tensor out = mixer::prn_refine_patch(p0, p1, initial, prn);
    Tensor loss = ssr::charbonnier_loss(out, target);
    if (step == 0) first_loss = loss.value();
    last_loss = loss.value();
    tape.backward(loss);
    std::vector<Tensor> grads;
    grads.reserve(params.size());
    for (const Tensor& p : params) grads.push_back(tape.grad(p));
    m2m::diff::adam_step(params, grads, st, acfg);
  }
  CHECK(last_loss <= 0.1 * first_loss);
}
