#include "m2m/lowrank.hpp"

#include <algorithm>
#include <stdexcept>

#include "m2m/ops.hpp"

namespace m2m::lowrank {

using diff::Shape;
using diff::Tape;

namespace {

Tensor init_weight(int rows, int cols, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  double bound = 1.0 / std::sqrt(static_cast<double>(cols));
  std::vector<double> w(static_cast<std::size_t>(rows) * cols);
  for (double& v : w) v = bound * dist(rng);
  return Tensor::from_data({rows, cols}, std::move(w), true);
}

Projector make_projector(int len, int hidden, std::mt19937_64& rng) {
  Projector p;
  p.w1 = init_weight(hidden, len, rng);
  p.b1 = Tensor::zeros({hidden}, true);
  p.w2 = init_weight(len, hidden, rng);
  p.b2 = Tensor::zeros({len}, true);
  return p;
}

// sigmoid(w2 . gelu(w1 . pooled + b1) + b2) as a {len} vector
Tensor run_projector(const Projector& p, const Tensor& pooled) {
  const int len = pooled.dim(0);
  const int hidden = p.b1.dim(0);
  Tensor col = diff::reshape(pooled, {len, 1});
  Tensor h1 = diff::add(diff::matmul(p.w1, col), diff::reshape(p.b1, {hidden, 1}));
  Tensor h2 = diff::gelu(h1);
  Tensor o = diff::add(diff::matmul(p.w2, h2), diff::reshape(p.b2, {len, 1}));
  return diff::sigmoid(diff::reshape(o, {len}));
}

void register_projectors(ParamPack& pack, const std::string& prefix,
                         const std::vector<Projector>& ps) {
  for (std::size_t i = 0; i < ps.size(); ++i) {
    std::string base = prefix + std::to_string(i);
    pack.add(base + ".w1", ps[i].w1);
    pack.add(base + ".b1", ps[i].b1);
    pack.add(base + ".w2", ps[i].w2);
    pack.add(base + ".b2", ps[i].b2);
  }
}

}  // namespace

ProjectorSet ProjectorSet::make(int m, int c, int h, int w,
                                std::mt19937_64& rng) {
  if (m < 1 || m >= std::min({c, h, w}))
    throw std::invalid_argument("ProjectorSet: require 1 <= M < min(C,H,W)");
  ProjectorSet ps;
  ps.m = m;
  ps.c = c;
  ps.h = h;
  ps.w = w;
  int hidden = std::max(m, 4);
  for (int i = 0; i < m; ++i) {
    ps.channel.push_back(make_projector(c, hidden, rng));
    ps.height.push_back(make_projector(h, hidden, rng));
    ps.width.push_back(make_projector(w, hidden, rng));
  }
  return ps;
}

std::vector<Tensor> ProjectorSet::trainable() const {
  std::vector<Tensor> out;
  for (const auto* group : {&channel, &height, &width})
    for (const Projector& p : *group) {
      out.push_back(p.w1);
      out.push_back(p.b1);
      out.push_back(p.w2);
      out.push_back(p.b2);
    }
  return out;
}

void ProjectorSet::register_into(ParamPack& pack,
                                 const std::string& prefix) const {
  register_projectors(pack, prefix + ".channel", channel);
  register_projectors(pack, prefix + ".height", height);
  register_projectors(pack, prefix + ".width", width);
}

Projections project_dims(const Tensor& x, const ProjectorSet& p) {
  if (x.rank() != 3 || x.dim(0) != p.c || x.dim(1) != p.h || x.dim(2) != p.w)
    throw std::invalid_argument("project_dims: input shape mismatch");
  Tensor pooled_c = diff::pool_mean_keep(x, 0);
  Tensor pooled_h = diff::pool_mean_keep(x, 1);
  Tensor pooled_w = diff::pool_mean_keep(x, 2);
  std::vector<Tensor> us, vs, ws;
  for (int i = 0; i < p.m; ++i) {
    us.push_back(run_projector(p.channel[i], pooled_c));
    vs.push_back(run_projector(p.height[i], pooled_h));
    ws.push_back(run_projector(p.width[i], pooled_w));
  }
  return {diff::stack_rows(us), diff::stack_rows(vs), diff::stack_rows(ws)};
}

Tensor rank1_compose(const Tensor& u, const Tensor& v, const Tensor& w) {
  if (u.rank() != 2 || v.rank() != 2 || w.rank() != 2 ||
      u.dim(0) != v.dim(0) || u.dim(0) != w.dim(0))
    throw std::invalid_argument("rank1_compose: M mismatch");
  const int m = u.dim(0), c = u.dim(1), h = v.dim(1), wd = w.dim(1);
  const double inv_m = 1.0 / static_cast<double>(m);
  std::vector<double> out(static_cast<std::size_t>(c) * h * wd, 0.0);
  for (int k = 0; k < m; ++k)
    for (int ic = 0; ic < c; ++ic) {
      double uc = u.data()[k * c + ic];
      for (int iy = 0; iy < h; ++iy) {
        double uv = uc * v.data()[k * h + iy];
        for (int ix = 0; ix < wd; ++ix)
          out[(ic * h + iy) * wd + ix] += uv * w.data()[k * wd + ix];
      }
    }
  for (double& val : out) val *= inv_m;
  bool rg = u.requires_grad() || v.requires_grad() || w.requires_grad();
  Tensor t = Tensor::from_data({c, h, wd}, std::move(out), rg);
  if (rg && Tape::active()) {
    Tape::active()->record([u, v, w, t, m, c, h, wd, inv_m](Tape& tp) {
      const auto& go = tp.grad_buf(t);
      std::vector<double>* gu = u.requires_grad() ? &tp.grad_buf(u) : nullptr;
      std::vector<double>* gv = v.requires_grad() ? &tp.grad_buf(v) : nullptr;
      std::vector<double>* gw = w.requires_grad() ? &tp.grad_buf(w) : nullptr;
      for (int k = 0; k < m; ++k)
        for (int ic = 0; ic < c; ++ic)
          for (int iy = 0; iy < h; ++iy)
            for (int ix = 0; ix < wd; ++ix) {
              double g = go[(ic * h + iy) * wd + ix] * inv_m;
              if (g == 0.0) continue;
              double uc = u.data()[k * c + ic];
              double vh = v.data()[k * h + iy];
              double ww = w.data()[k * wd + ix];
              if (gu) (*gu)[k * c + ic] += g * vh * ww;
              if (gv) (*gv)[k * h + iy] += g * uc * ww;
              if (gw) (*gw)[k * wd + ix] += g * uc * vh;
            }
    });
  }
  return t;
}

Tensor modulate(const Tensor& x, const Tensor& t) { return diff::mul(x, t); }

Tensor low_rank_modulate(const Tensor& x, const ProjectorSet& p) {
  Projections pr = project_dims(x, p);
  return modulate(x, rank1_compose(pr.u, pr.v, pr.w));
}

}  // namespace m2m::lowrank
