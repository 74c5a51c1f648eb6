#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "m2m/gradcheck.hpp"
#include "m2m/lowrank.hpp"
#include "m2m/ops.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using m2m::diff::Tensor;
using namespace m2m;
using testutil::bits_equal;
using testutil::rand_tensor;

TEST_CASE("projection shapes follow the contract") {
  std::mt19937_64 rng(31);
  auto ps = lowrank::ProjectorSet::make(4, 8, 16, 16, rng);
  Tensor x = rand_tensor({8, 16, 16}, -1.0, 1.0, rng);
  lowrank::Projections pr = lowrank::project_dims(x, ps);
  CHECK(pr.u.shape() == m2m::diff::Shape{4, 8});
  CHECK(pr.v.shape() == m2m::diff::Shape{4, 16});
  CHECK(pr.w.shape() == m2m::diff::Shape{4, 16});
  for (double v : pr.u.data()) CHECK((v > 0.0 && v < 1.0));
}

TEST_CASE("M constraint is enforced") {
  std::mt19937_64 rng(32);
  CHECK_THROWS_AS(lowrank::ProjectorSet::make(8, 8, 16, 16, rng),
                  std::invalid_argument);
  CHECK_THROWS_AS(lowrank::ProjectorSet::make(0, 8, 16, 16, rng),
                  std::invalid_argument);
  auto ps = lowrank::ProjectorSet::make(3, 8, 16, 16, rng);
  CHECK_THROWS_AS(lowrank::project_dims(rand_tensor({8, 8, 8}, 0, 1, rng), ps),
                  std::invalid_argument);
}

TEST_CASE("zero-weight projectors output sigmoid(0) = 0.5") {
  std::mt19937_64 rng(33);
  auto ps = lowrank::ProjectorSet::make(2, 6, 10, 12, rng);
  for (auto* group : {&ps.channel, &ps.height, &ps.width})
    for (lowrank::Projector& p : *group) {
      p.w1 = Tensor::zeros(p.w1.shape());
      p.b1 = Tensor::zeros(p.b1.shape());
      p.w2 = Tensor::zeros(p.w2.shape());
      p.b2 = Tensor::zeros(p.b2.shape());
    }
  Tensor x = rand_tensor({6, 10, 12}, -1.0, 1.0, rng);
  lowrank::Projections pr = lowrank::project_dims(x, ps);
  for (double v : pr.u.data()) CHECK(v == 0.5);
  for (double v : pr.v.data()) CHECK(v == 0.5);
  for (double v : pr.w.data()) CHECK(v == 0.5);
  Tensor t = lowrank::rank1_compose(pr.u, pr.v, pr.w);
  for (double v : t.data()) CHECK(v == 0.125);
}

TEST_CASE("constant input makes projections roll-invariant") {
  std::mt19937_64 rng(34);
  auto ps = lowrank::ProjectorSet::make(2, 5, 8, 8, rng);
  Tensor x = Tensor::full({5, 8, 8}, 0.37);
  Tensor rolled = diff::roll2d(x, 3, 5);
  lowrank::Projections a = lowrank::project_dims(x, ps);
  lowrank::Projections b = lowrank::project_dims(rolled, ps);
  CHECK(bits_equal(a.u, b.u));
  CHECK(bits_equal(a.v, b.v));
  CHECK(bits_equal(a.w, b.w));
}

TEST_CASE("rank-1 composition follows the outer-product definition") {
  Tensor u = Tensor::from_data({1, 2}, {0.3, 0.8});
  Tensor v = Tensor::from_data({1, 3}, {0.1, 0.5, 0.9});
  Tensor w = Tensor::from_data({1, 2}, {0.6, 0.2});
  Tensor t = lowrank::rank1_compose(u, v, w);
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 2; ++x)
        CHECK(t.at({c, y, x}) ==
              doctest::Approx(u.data()[c] * v.data()[y] * w.data()[x])
                  .epsilon(1e-15));
}

TEST_CASE("matricizations of the composed tensor have numerical rank <= M") {
  std::mt19937_64 rng(35);
  for (int m : {1, 3, 4}) {
    for (int trial = 0; trial < 10; ++trial) {
      Tensor u = rand_tensor({m, 8}, 0.05, 0.95, rng);
      Tensor v = rand_tensor({m, 16}, 0.05, 0.95, rng);
      Tensor w = rand_tensor({m, 16}, 0.05, 0.95, rng);
      Tensor t = lowrank::rank1_compose(u, v, w);
      for (int mode = 0; mode < 3; ++mode) {
        int rows = 0, cols = 0;
        std::vector<double> mat = oracle::matricize(t, mode, rows, cols);
        std::vector<double> sv = oracle::singular_values(std::move(mat), rows, cols);
        REQUIRE(sv[0] > 0.0);
        for (std::size_t i = m; i < sv.size(); ++i)
          CHECK(sv[i] <= 1e-8 * sv[0]);
      }
    }
  }
}

TEST_CASE("modulation identities and bounds") {
  std::mt19937_64 rng(36);
  Tensor x = rand_tensor({4, 6, 6}, -2.0, 2.0, rng);
  CHECK(bits_equal(lowrank::modulate(x, Tensor::full(x.shape(), 1.0)), x));
  Tensor zeroed = lowrank::modulate(x, Tensor::zeros(x.shape()));
  for (double v : zeroed.data()) CHECK(v == 0.0);
  CHECK_THROWS_AS(lowrank::modulate(x, Tensor::zeros({4, 6, 5})),
                  std::invalid_argument);

  auto ps = lowrank::ProjectorSet::make(2, 4, 6, 6, rng);
  Tensor mod = lowrank::low_rank_modulate(x, ps);
  for (std::int64_t i = 0; i < x.numel(); ++i)
    CHECK(std::fabs(mod.data()[i]) <= std::fabs(x.data()[i]));
}

TEST_CASE("block is equivariant under paired channel permutation") {
  std::mt19937_64 rng(37);
  const int c = 5, h = 6, w = 7;
  auto ps = lowrank::ProjectorSet::make(2, c, h, w, rng);
  Tensor x = rand_tensor({c, h, w}, -1.0, 1.0, rng);

  std::vector<int> perm = {3, 0, 4, 1, 2};
  // permute channels of x
  std::vector<double> px(x.data().size());
  const std::int64_t plane = h * w;
  for (int ch = 0; ch < c; ++ch)
    for (std::int64_t p = 0; p < plane; ++p)
      px[ch * plane + p] = x.data()[perm[ch] * plane + p];
  Tensor xp = Tensor::from_data({c, h, w}, px);

  // permute the channel projectors to match: columns of w1, rows of w2/b2
  lowrank::ProjectorSet psp = ps;
  for (lowrank::Projector& pr : psp.channel) {
    const int hidden = pr.b1.dim(0);
    std::vector<double> w1(pr.w1.data().begin(), pr.w1.data().end());
    std::vector<double> w2(pr.w2.data().begin(), pr.w2.data().end());
    std::vector<double> b2(pr.b2.data().begin(), pr.b2.data().end());
    std::vector<double> w1p(w1.size()), w2p(w2.size()), b2p(b2.size());
    for (int i = 0; i < hidden; ++i)
      for (int j = 0; j < c; ++j) w1p[i * c + j] = w1[i * c + perm[j]];
    for (int j = 0; j < c; ++j) {
      for (int i = 0; i < hidden; ++i)
        w2p[j * hidden + i] = w2[perm[j] * hidden + i];
      b2p[j] = b2[perm[j]];
    }
    pr.w1 = Tensor::from_data(pr.w1.shape(), w1p);
    pr.w2 = Tensor::from_data(pr.w2.shape(), w2p);
    pr.b2 = Tensor::from_data(pr.b2.shape(), b2p);
  }

  Tensor out = lowrank::low_rank_modulate(x, ps);
  Tensor outp = lowrank::low_rank_modulate(xp, psp);
  for (int ch = 0; ch < c; ++ch)
    for (std::int64_t p = 0; p < plane; ++p)
      CHECK(outp.data()[ch * plane + p] ==
            doctest::Approx(out.data()[perm[ch] * plane + p]).epsilon(1e-12));
}

TEST_CASE("gradients flow through the whole block") {
  std::mt19937_64 rng(38);
  auto ps = lowrank::ProjectorSet::make(3, 6, 8, 8, rng);
  Tensor x = rand_tensor({6, 8, 8}, -1.0, 1.0, rng);
  double err = diff::gradcheck(
      [&ps](const Tensor& v) {
        Tensor y = lowrank::low_rank_modulate(v, ps);
        return diff::mean(diff::mul(y, y));
      },
      x);
  CHECK(err <= 1e-4);
}

TEST_CASE("parameters serialize through the shared container") {
  std::mt19937_64 rng(39);
  auto ps = lowrank::ProjectorSet::make(2, 4, 6, 6, rng);
  m2m::diff::ParamPack pack;
  ps.register_into(pack, "lowrank");
  CHECK(pack.entries().size() == 3u * 2u * 4u);
  std::string path = "lowrank_params.m2mp";
  pack.save(path);
  auto loaded = m2m::diff::ParamPack::load(path);
  CHECK(loaded.entries().size() == pack.entries().size());
  for (std::size_t i = 0; i < pack.entries().size(); ++i)
    CHECK(bits_equal(loaded.entries()[i].second, pack.entries()[i].second));
  std::remove(path.c_str());
}
