#include "m2m/ops.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>

namespace m2m::diff {

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

void ensure_finite(const Tensor& t, const char* op) {
  for (double v : t.data())
    if (!std::isfinite(v))
      throw std::runtime_error(std::string("non-finite output in ") + op);
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

bool want_grad(std::initializer_list<const Tensor*> ins) {
  if (!Tape::active()) return false;
  for (const Tensor* t : ins)
    if (t->requires_grad()) return true;
  return false;
}

// y_i = f(x_i); df is dy/dx evaluated from (x_i, y_i)
template <class F, class DF>
Tensor unary_op(const Tensor& x, const char* op, F f, DF df) {
  std::vector<double> out(x.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x.data()[i]);
  Tensor y = Tensor::from_data(x.shape(), std::move(out), x.requires_grad());
  ensure_finite(y, op);
  if (want_grad({&x})) {
    Tape::active()->record([x, y, df](Tape& tp) {
      const auto& go = tp.grad_buf(y);
      auto& gx = tp.grad_buf(x);
      for (std::size_t i = 0; i < gx.size(); ++i)
        gx[i] += go[i] * df(x.data()[i], y.data()[i]);
    });
  }
  return y;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> out(a.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  Tensor y = Tensor::from_data(a.shape(), std::move(out),
                               a.requires_grad() || b.requires_grad());
  ensure_finite(y, "add");
  if (want_grad({&a, &b})) {
    Tape::active()->record([a, b, y](Tape& tp) {
      const auto& go = tp.grad_buf(y);
      if (a.requires_grad()) {
        auto& ga = tp.grad_buf(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i];
      }
      if (b.requires_grad()) {
        auto& gb = tp.grad_buf(b);
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[i];
      }
    });
  }
  return y;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> out(a.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  Tensor y = Tensor::from_data(a.shape(), std::move(out),
                               a.requires_grad() || b.requires_grad());
  ensure_finite(y, "sub");
  if (want_grad({&a, &b})) {
    Tape::active()->record([a, b, y](Tape& tp) {
      const auto& go = tp.grad_buf(y);
      if (a.requires_grad()) {
        auto& ga = tp.grad_buf(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i];
      }
      if (b.requires_grad()) {
        auto& gb = tp.grad_buf(b);
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= go[i];
      }
    });
  }
  return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> out(a.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  Tensor y = Tensor::from_data(a.shape(), std::move(out),
                               a.requires_grad() || b.requires_grad());
  ensure_finite(y, "mul");
  if (want_grad({&a, &b})) {
    Tape::active()->record([a, b, y](Tape& tp) {
      const auto& go = tp.grad_buf(y);
      if (a.requires_grad()) {
        auto& ga = tp.grad_buf(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * b.data()[i];
      }
      if (b.requires_grad()) {
        auto& gb = tp.grad_buf(b);
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[i] * a.data()[i];
      }
    });
  }
  return y;
}

Tensor neg(const Tensor& x) {
  return unary_op(
      x, "neg", [](double v) { return -v; },
      [](double, double) { return -1.0; });
}

Tensor scale(const Tensor& x, double c) {
  return unary_op(
      x, "scale", [c](double v) { return c * v; },
      [c](double, double) { return c; });
}

Tensor add_scalar(const Tensor& x, double c) {
  return unary_op(
      x, "add_scalar", [c](double v) { return v + c; },
      [](double, double) { return 1.0; });
}

Tensor abs_val(const Tensor& x) {
  return unary_op(
      x, "abs", [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor sqrt_val(const Tensor& x) {
  for (double v : x.data())
    if (v < 0.0) throw std::invalid_argument("sqrt: negative input");
  return unary_op(
      x, "sqrt", [](double v) { return std::sqrt(v); },
      [](double, double y) { return 0.5 / y; });
}

Tensor exp_val(const Tensor& x) {
  return unary_op(
      x, "exp", [](double v) { return std::exp(v); },
      [](double, double y) { return y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      x, "sigmoid",
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor gelu(const Tensor& x) {
  return unary_op(
      x, "gelu",
      [](double v) { return v * 0.5 * (1.0 + std::erf(v * kInvSqrt2)); },
      [](double v, double) {
        double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        return cdf + v * pdf;
      });
}

Tensor clamp01(const Tensor& x) {
  return unary_op(
      x, "clamp01",
      [](double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); },
      [](double v, double) { return (v > 0.0 && v < 1.0) ? 1.0 : 0.0; });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  Tensor y = Tensor::from_data({1}, {acc}, x.requires_grad());
  ensure_finite(y, "sum");
  if (want_grad({&x})) {
    Tape::active()->record([x, y](Tape& tp) {
      double g = tp.grad_buf(y)[0];
      auto& gx = tp.grad_buf(x);
      for (double& v : gx) v += g;
    });
  }
  return y;
}

Tensor mean(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  double n = static_cast<double>(x.numel());
  Tensor y = Tensor::from_data({1}, {acc / n}, x.requires_grad());
  ensure_finite(y, "mean");
  if (want_grad({&x})) {
    Tape::active()->record([x, y, n](Tape& tp) {
      double g = tp.grad_buf(y)[0] / n;
      auto& gx = tp.grad_buf(x);
      for (double& v : gx) v += g;
    });
  }
  return y;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw std::invalid_argument("matmul: expects {m,k} x {k,n}");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      double av = a.data()[i * k + p];
      for (int j = 0; j < n; ++j) out[i * n + j] += av * b.data()[p * n + j];
    }
  Tensor y = Tensor::from_data({m, n}, std::move(out),
                               a.requires_grad() || b.requires_grad());
  ensure_finite(y, "matmul");
  if (want_grad({&a, &b})) {
    Tape::active()->record([a, b, y, m, k, n](Tape& tp) {
      const auto& go = tp.grad_buf(y);
      if (a.requires_grad()) {
        auto& ga = tp.grad_buf(a);
        for (int i = 0; i < m; ++i)
          for (int p = 0; p < k; ++p) {
            double acc = 0.0;
            for (int j = 0; j < n; ++j)
              acc += go[i * n + j] * b.data()[p * n + j];
            ga[i * k + p] += acc;
          }
      }
      if (b.requires_grad()) {
        auto& gb = tp.grad_buf(b);
        for (int p = 0; p < k; ++p)
          for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int i = 0; i < m; ++i)
              acc += a.data()[i * k + p] * go[i * n + j];
            gb[p * n + j] += acc;
          }
      }
    });
  }
  return y;
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 double eps) {
  if (x.rank() < 1) throw std::invalid_argument("layernorm: rank >= 1 required");
  const int L = x.dim(x.rank() - 1);
  if (gamma.rank() != 1 || gamma.dim(0) != L || beta.rank() != 1 ||
      beta.dim(0) != L)
    throw std::invalid_argument("layernorm: gamma/beta must match last axis");
  const std::int64_t rows = x.numel() / L;

  std::vector<double> out(x.data().size());
  auto xhat = std::make_shared<std::vector<double>>(x.data().size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * L;
    double mu = 0.0;
    for (int i = 0; i < L; ++i) mu += xr[i];
    mu /= L;
    double var = 0.0;
    for (int i = 0; i < L; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= L;
    double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    for (int i = 0; i < L; ++i) {
      double xh = (xr[i] - mu) * inv;
      (*xhat)[r * L + i] = xh;
      out[r * L + i] = gamma.data()[i] * xh + beta.data()[i];
    }
  }
  Tensor y = Tensor::from_data(
      x.shape(), std::move(out),
      x.requires_grad() || gamma.requires_grad() || beta.requires_grad());
  ensure_finite(y, "layernorm");
  if (want_grad({&x, &gamma, &beta})) {
    Tape::active()->record([x, gamma, beta, y, xhat, inv_std, L,
                            rows](Tape& tp) {
      const auto& go = tp.grad_buf(y);
      for (std::int64_t r = 0; r < rows; ++r) {
        const double* xh = xhat->data() + r * L;
        const double* g = go.data() + r * L;
        if (gamma.requires_grad()) {
          auto& gg = tp.grad_buf(gamma);
          for (int i = 0; i < L; ++i) gg[i] += g[i] * xh[i];
        }
        if (beta.requires_grad()) {
          auto& gb = tp.grad_buf(beta);
          for (int i = 0; i < L; ++i) gb[i] += g[i];
        }
        if (x.requires_grad()) {
          auto& gx = tp.grad_buf(x);
          double m1 = 0.0, m2 = 0.0;
          for (int i = 0; i < L; ++i) {
            double gxh = g[i] * gamma.data()[i];
            m1 += gxh;
            m2 += gxh * xh[i];
          }
          m1 /= L;
          m2 /= L;
          double inv = (*inv_std)[r];
          for (int i = 0; i < L; ++i) {
            double gxh = g[i] * gamma.data()[i];
            gx[r * L + i] += inv * (gxh - m1 - xh[i] * m2);
          }
        }
      }
    });
  }
  return y;
}

Tensor conv2d_3x3(const Tensor& x, const Tensor& w, const Tensor& bias,
                  int stride) {
  if (stride != 1 && stride != 2)
    throw std::invalid_argument("conv2d_3x3: stride must be 1 or 2");
  if (x.rank() != 3 || w.rank() != 4 || w.dim(2) != 3 || w.dim(3) != 3 ||
      w.dim(1) != x.dim(0) || bias.rank() != 1 || bias.dim(0) != w.dim(0))
    throw std::invalid_argument("conv2d_3x3: shape mismatch");
  const int ci = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const int co = w.dim(0);
  const int ho = (h + 2 - 3) / stride + 1;
  const int wo = (wd + 2 - 3) / stride + 1;

  std::vector<double> out(static_cast<std::size_t>(co) * ho * wo);
  for (int oc = 0; oc < co; ++oc)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        double acc = bias.data()[oc];
        for (int ic = 0; ic < ci; ++ic)
          for (int ky = 0; ky < 3; ++ky) {
            int iy = oy * stride + ky - 1;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < 3; ++kx) {
              int ix = ox * stride + kx - 1;
              if (ix < 0 || ix >= wd) continue;
              acc += x.data()[(ic * h + iy) * wd + ix] *
                     w.data()[((oc * ci + ic) * 3 + ky) * 3 + kx];
            }
          }
        out[(oc * ho + oy) * wo + ox] = acc;
      }
  Tensor y = Tensor::from_data(
      {co, ho, wo}, std::move(out),
      x.requires_grad() || w.requires_grad() || bias.requires_grad());
  ensure_finite(y, "conv2d_3x3");
  if (want_grad({&x, &w, &bias})) {
    Tape::active()->record([x, w, bias, y, stride, ci, h, wd, co, ho,
                            wo](Tape& tp) {
      const auto& go = tp.grad_buf(y);
      std::vector<double>* gx = x.requires_grad() ? &tp.grad_buf(x) : nullptr;
      std::vector<double>* gw = w.requires_grad() ? &tp.grad_buf(w) : nullptr;
      std::vector<double>* gb =
          bias.requires_grad() ? &tp.grad_buf(bias) : nullptr;
      for (int oc = 0; oc < co; ++oc)
        for (int oy = 0; oy < ho; ++oy)
          for (int ox = 0; ox < wo; ++ox) {
            double g = go[(oc * ho + oy) * wo + ox];
            if (gb) (*gb)[oc] += g;
            for (int ic = 0; ic < ci; ++ic)
              for (int ky = 0; ky < 3; ++ky) {
                int iy = oy * stride + ky - 1;
                if (iy < 0 || iy >= h) continue;
                for (int kx = 0; kx < 3; ++kx) {
                  int ix = ox * stride + kx - 1;
                  if (ix < 0 || ix >= wd) continue;
                  if (gx)
                    (*gx)[(ic * h + iy) * wd + ix] +=
                        g * w.data()[((oc * ci + ic) * 3 + ky) * 3 + kx];
                  if (gw)
                    (*gw)[((oc * ci + ic) * 3 + ky) * 3 + kx] +=
                        g * x.data()[(ic * h + iy) * wd + ix];
                }
              }
          }
    });
  }
  return y;
}

Tensor bilinear_sample(const Tensor& src, const Tensor& coords) {
  if (src.rank() != 3 || coords.rank() != 3 || coords.dim(0) != 2)
    throw std::invalid_argument("bilinear_sample: src {C,H,W}, coords {2,Ho,Wo}");
  const int c = src.dim(0), h = src.dim(1), w = src.dim(2);
  const int ho = coords.dim(1), wo = coords.dim(2);
  const std::int64_t plane = static_cast<std::int64_t>(ho) * wo;

  std::vector<double> out(static_cast<std::size_t>(c) * plane);
  for (std::int64_t p = 0; p < plane; ++p) {
    double cx = coords.data()[p];
    double cy = coords.data()[plane + p];
    double xc = cx < 0.0 ? 0.0 : (cx > w - 1 ? static_cast<double>(w - 1) : cx);
    double yc = cy < 0.0 ? 0.0 : (cy > h - 1 ? static_cast<double>(h - 1) : cy);
    int x0 = static_cast<int>(std::floor(xc));
    int y0 = static_cast<int>(std::floor(yc));
    int x1 = x0 + 1 < w ? x0 + 1 : w - 1;
    int y1 = y0 + 1 < h ? y0 + 1 : h - 1;
    double fx = xc - x0, fy = yc - y0;
    for (int ch = 0; ch < c; ++ch) {
      const double* s = src.data().data() + static_cast<std::int64_t>(ch) * h * w;
      double v00 = s[y0 * w + x0];
      if (fx == 0.0 && fy == 0.0) {
        out[ch * plane + p] = v00;  // bitwise exact at integer coords
        continue;
      }
      double v10 = s[y0 * w + x1];
      double v01 = s[y1 * w + x0];
      double v11 = s[y1 * w + x1];
      out[ch * plane + p] = (1.0 - fx) * (1.0 - fy) * v00 +
                            fx * (1.0 - fy) * v10 + (1.0 - fx) * fy * v01 +
                            fx * fy * v11;
    }
  }
  Tensor y = Tensor::from_data({c, ho, wo}, std::move(out),
                               src.requires_grad() || coords.requires_grad());
  ensure_finite(y, "bilinear_sample");
  if (want_grad({&src, &coords})) {
    Tape::active()->record([src, coords, y, c, h, w, plane](Tape& tp) {
      const auto& go = tp.grad_buf(y);
      std::vector<double>* gs =
          src.requires_grad() ? &tp.grad_buf(src) : nullptr;
      std::vector<double>* gc =
          coords.requires_grad() ? &tp.grad_buf(coords) : nullptr;
      for (std::int64_t p = 0; p < plane; ++p) {
        double cx = coords.data()[p];
        double cy = coords.data()[plane + p];
        bool x_in = cx > 0.0 && cx < w - 1;
        bool y_in = cy > 0.0 && cy < h - 1;
        double xc = cx < 0.0 ? 0.0 : (cx > w - 1 ? static_cast<double>(w - 1) : cx);
        double yc = cy < 0.0 ? 0.0 : (cy > h - 1 ? static_cast<double>(h - 1) : cy);
        int x0 = static_cast<int>(std::floor(xc));
        int y0 = static_cast<int>(std::floor(yc));
        int x1 = x0 + 1 < w ? x0 + 1 : w - 1;
        int y1 = y0 + 1 < h ? y0 + 1 : h - 1;
        double fx = xc - x0, fy = yc - y0;
        for (int ch = 0; ch < c; ++ch) {
          double g = go[ch * plane + p];
          if (g == 0.0) continue;
          const double* s =
              src.data().data() + static_cast<std::int64_t>(ch) * h * w;
          std::int64_t base = static_cast<std::int64_t>(ch) * h * w;
          if (gs) {
            (*gs)[base + static_cast<std::int64_t>(y0) * w + x0] +=
                g * (1.0 - fx) * (1.0 - fy);
            (*gs)[base + static_cast<std::int64_t>(y0) * w + x1] +=
                g * fx * (1.0 - fy);
            (*gs)[base + static_cast<std::int64_t>(y1) * w + x0] +=
                g * (1.0 - fx) * fy;
            (*gs)[base + static_cast<std::int64_t>(y1) * w + x1] +=
                g * fx * fy;
          }
          if (gc) {
            double v00 = s[y0 * w + x0], v10 = s[y0 * w + x1];
            double v01 = s[y1 * w + x0], v11 = s[y1 * w + x1];
            if (x_in)
              (*gc)[p] +=
                  g * ((1.0 - fy) * (v10 - v00) + fy * (v11 - v01));
            if (y_in)
              (*gc)[plane + p] +=
                  g * ((1.0 - fx) * (v01 - v00) + fx * (v11 - v10));
          }
        }
      }
    });
  }
  return y;
}

Tensor maxpool2d(const Tensor& x, int k) {
  if (k < 1) throw std::invalid_argument("maxpool2d: k must be >= 1");
  if (x.rank() != 3) throw std::invalid_argument("maxpool2d: expects {C,H,W}");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int ho = (h + k - 1) / k, wo = (w + k - 1) / k;
  std::vector<double> out(static_cast<std::size_t>(c) * ho * wo);
  auto argmax = std::make_shared<std::vector<std::int64_t>>(out.size());
  for (int ch = 0; ch < c; ++ch)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        int y_end = std::min((oy + 1) * k, h), x_end = std::min((ox + 1) * k, w);
        double best = -1e308;
        std::int64_t best_idx = -1;
        for (int iy = oy * k; iy < y_end; ++iy)
          for (int ix = ox * k; ix < x_end; ++ix) {
            double v = x.data()[(ch * h + iy) * w + ix];
            if (v > best) {
              best = v;
              best_idx = (static_cast<std::int64_t>(ch) * h + iy) * w + ix;
            }
          }
        out[(ch * ho + oy) * wo + ox] = best;
        (*argmax)[(ch * ho + oy) * wo + ox] = best_idx;
      }
  Tensor y = Tensor::from_data({c, ho, wo}, std::move(out), x.requires_grad());
  ensure_finite(y, "maxpool2d");
  if (want_grad({&x})) {
    Tape::active()->record([x, y, argmax](Tape& tp) {
      const auto& go = tp.grad_buf(y);
      auto& gx = tp.grad_buf(x);
      for (std::size_t i = 0; i < go.size(); ++i) gx[(*argmax)[i]] += go[i];
    });
  }
  return y;
}

Tensor pool_mean_keep(const Tensor& x, int keep_axis) {
  if (x.rank() != 3) throw std::invalid_argument("pool_mean_keep: expects {C,H,W}");
  if (keep_axis < 0 || keep_axis > 2)
    throw std::invalid_argument("pool_mean_keep: bad axis");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int kept = x.dim(keep_axis);
  const double count = static_cast<double>(x.numel()) / kept;
  std::vector<double> out(kept, 0.0);
  for (int ch = 0; ch < c; ++ch)
    for (int iy = 0; iy < h; ++iy)
      for (int ix = 0; ix < w; ++ix) {
        int kidx = keep_axis == 0 ? ch : (keep_axis == 1 ? iy : ix);
        out[kidx] += x.data()[(ch * h + iy) * w + ix];
      }
  for (double& v : out) v /= count;
  Tensor y = Tensor::from_data({kept}, std::move(out), x.requires_grad());
  ensure_finite(y, "pool_mean_keep");
  if (want_grad({&x})) {
    Tape::active()->record([x, y, keep_axis, c, h, w, count](Tape& tp) {
      const auto& go = tp.grad_buf(y);
      auto& gx = tp.grad_buf(x);
      for (int ch = 0; ch < c; ++ch)
        for (int iy = 0; iy < h; ++iy)
          for (int ix = 0; ix < w; ++ix) {
            int kidx = keep_axis == 0 ? ch : (keep_axis == 1 ? iy : ix);
            gx[(ch * h + iy) * w + ix] += go[kidx] / count;
          }
    });
  }
  return y;
}

Tensor global_avgpool(const Tensor& x) { return pool_mean_keep(x, 0); }

Tensor gather(const Tensor& x, const std::vector<std::int64_t>& index,
              Shape out_shape) {
  if (shape_numel(out_shape) != static_cast<std::int64_t>(index.size()))
    throw std::invalid_argument("gather: index count mismatch");
  std::vector<double> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    std::int64_t j = index[i];
    if (j < 0 || j >= x.numel()) throw std::out_of_range("gather: bad index");
    out[i] = x.data()[j];
  }
  Tensor y =
      Tensor::from_data(std::move(out_shape), std::move(out), x.requires_grad());
  if (want_grad({&x})) {
    Tape::active()->record([x, y, index](Tape& tp) {
      const auto& go = tp.grad_buf(y);
      auto& gx = tp.grad_buf(x);
      for (std::size_t i = 0; i < index.size(); ++i) gx[index[i]] += go[i];
    });
  }
  return y;
}

Tensor scatter_sum(const Tensor& x, const std::vector<std::int64_t>& index,
                   Shape out_shape) {
  if (static_cast<std::int64_t>(index.size()) != x.numel())
    throw std::invalid_argument("scatter_sum: index count mismatch");
  std::vector<double> out(static_cast<std::size_t>(shape_numel(out_shape)), 0.0);
  for (std::size_t i = 0; i < index.size(); ++i) {
    std::int64_t j = index[i];
    if (j < 0 || j >= static_cast<std::int64_t>(out.size()))
      throw std::out_of_range("scatter_sum: bad index");
    out[j] += x.data()[i];
  }
  Tensor y =
      Tensor::from_data(std::move(out_shape), std::move(out), x.requires_grad());
  if (want_grad({&x})) {
    Tape::active()->record([x, y, index](Tape& tp) {
      const auto& go = tp.grad_buf(y);
      auto& gx = tp.grad_buf(x);
      for (std::size_t i = 0; i < index.size(); ++i) gx[i] += go[index[i]];
    });
  }
  return y;
}

Tensor reshape(const Tensor& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.numel())
    throw std::invalid_argument("reshape: numel mismatch");
  Tensor y = Tensor::from_data(std::move(new_shape),
                               {x.data().begin(), x.data().end()},
                               x.requires_grad());
  if (want_grad({&x})) {
    Tape::active()->record([x, y](Tape& tp) {
      const auto& go = tp.grad_buf(y);
      auto& gx = tp.grad_buf(x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i];
    });
  }
  return y;
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: empty");
  const int h = parts[0].dim(1), w = parts[0].dim(2);
  int total_c = 0;
  bool rg = false;
  for (const Tensor& p : parts) {
    if (p.rank() != 3 || p.dim(1) != h || p.dim(2) != w)
      throw std::invalid_argument("concat_channels: spatial mismatch");
    total_c += p.dim(0);
    rg = rg || p.requires_grad();
  }
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(total_c) * h * w);
  for (const Tensor& p : parts)
    out.insert(out.end(), p.data().begin(), p.data().end());
  Tensor y = Tensor::from_data({total_c, h, w}, std::move(out), rg);
  if (rg && Tape::active()) {
    Tape::active()->record([parts, y](Tape& tp) {
      const auto& go = tp.grad_buf(y);
      std::size_t off = 0;
      for (const Tensor& p : parts) {
        std::size_t n = p.data().size();
        if (p.requires_grad()) {
          auto& gp = tp.grad_buf(p);
          for (std::size_t i = 0; i < n; ++i) gp[i] += go[off + i];
        }
        off += n;
      }
    });
  }
  return y;
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows: empty");
  const int l = static_cast<int>(rows[0].numel());
  bool rg = false;
  for (const Tensor& r : rows) {
    if (r.rank() != 1 || r.dim(0) != l)
      throw std::invalid_argument("stack_rows: row length mismatch");
    rg = rg || r.requires_grad();
  }
  std::vector<double> out;
  out.reserve(rows.size() * l);
  for (const Tensor& r : rows)
    out.insert(out.end(), r.data().begin(), r.data().end());
  Tensor y = Tensor::from_data({static_cast<int>(rows.size()), l},
                               std::move(out), rg);
  if (rg && Tape::active()) {
    Tape::active()->record([rows, y, l](Tape& tp) {
      const auto& go = tp.grad_buf(y);
      for (std::size_t m = 0; m < rows.size(); ++m) {
        if (!rows[m].requires_grad()) continue;
        auto& gr = tp.grad_buf(rows[m]);
        for (int i = 0; i < l; ++i) gr[i] += go[m * l + i];
      }
    });
  }
  return y;
}

Tensor upsample_nearest2(const Tensor& x) {
  if (x.rank() != 3) throw std::invalid_argument("upsample_nearest2: {C,H,W}");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  std::vector<double> out(static_cast<std::size_t>(c) * 4 * h * w);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < 2 * h; ++y)
      for (int xx = 0; xx < 2 * w; ++xx)
        out[(ch * 2 * h + y) * 2 * w + xx] =
            x.data()[(ch * h + y / 2) * w + xx / 2];
  Tensor y = Tensor::from_data({c, 2 * h, 2 * w}, std::move(out),
                               x.requires_grad());
  if (want_grad({&x})) {
    Tape::active()->record([x, y, c, h, w](Tape& tp) {
      const auto& go = tp.grad_buf(y);
      auto& gx = tp.grad_buf(x);
      for (int ch = 0; ch < c; ++ch)
        for (int yy = 0; yy < 2 * h; ++yy)
          for (int xx = 0; xx < 2 * w; ++xx)
            gx[(ch * h + yy / 2) * w + xx / 2] +=
                go[(ch * 2 * h + yy) * 2 * w + xx];
    });
  }
  return y;
}

Tensor roll2d(const Tensor& x, int dy, int dx) {
  if (x.rank() < 2) throw std::invalid_argument("roll2d: rank >= 2 required");
  const int w = x.dim(x.rank() - 1);
  const int h = x.dim(x.rank() - 2);
  const std::int64_t planes = x.numel() / (static_cast<std::int64_t>(h) * w);
  auto wrap = [](int v, int m) { return ((v % m) + m) % m; };
  std::vector<std::int64_t> index(static_cast<std::size_t>(x.numel()));
  for (std::int64_t pl = 0; pl < planes; ++pl)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx)
        index[(pl * h + y) * w + xx] =
            (pl * h + wrap(y - dy, h)) * w + wrap(xx - dx, w);
  return gather(x, index, x.shape());
}

Primitive primitive_from_string(std::string_view name) {
  if (name == "matmul") return Primitive::matmul;
  if (name == "conv2d-3x3" || name == "conv2d_3x3") return Primitive::conv2d_3x3;
  if (name == "layernorm") return Primitive::layernorm;
  if (name == "gelu") return Primitive::gelu;
  if (name == "sigmoid") return Primitive::sigmoid;
  if (name == "exp") return Primitive::exp;
  if (name == "add") return Primitive::add;
  if (name == "mul") return Primitive::mul;
  if (name == "bilinear_sample") return Primitive::bilinear_sample;
  if (name == "maxpool2d") return Primitive::maxpool2d;
  if (name == "global_avgpool") return Primitive::global_avgpool;
  throw std::invalid_argument("unknown primitive: " + std::string(name));
}

const char* primitive_name(Primitive kind) {
  switch (kind) {
    case Primitive::matmul: return "matmul";
    case Primitive::conv2d_3x3: return "conv2d-3x3";
    case Primitive::layernorm: return "layernorm";
    case Primitive::gelu: return "gelu";
    case Primitive::sigmoid: return "sigmoid";
    case Primitive::exp: return "exp";
    case Primitive::add: return "add";
    case Primitive::mul: return "mul";
    case Primitive::bilinear_sample: return "bilinear_sample";
    case Primitive::maxpool2d: return "maxpool2d";
    case Primitive::global_avgpool: return "global_avgpool";
  }
  return "?";
}

Tensor apply_primitive(Primitive kind, const std::vector<Tensor>& inputs) {
  auto need = [&](std::size_t n) {
    if (inputs.size() != n)
      throw std::invalid_argument(std::string(primitive_name(kind)) +
                                  ": wrong input count");
  };
  switch (kind) {
    case Primitive::matmul:
      need(2);
      return matmul(inputs[0], inputs[1]);
    case Primitive::conv2d_3x3: {
      if (inputs.size() != 3 && inputs.size() != 4)
        throw std::invalid_argument("conv2d-3x3: expects x,w,bias[,stride]");
      int stride = inputs.size() == 4
                       ? static_cast<int>(inputs[3].value())
                       : 1;
      return conv2d_3x3(inputs[0], inputs[1], inputs[2], stride);
    }
    case Primitive::layernorm:
      need(3);
      return layernorm(inputs[0], inputs[1], inputs[2]);
    case Primitive::gelu:
      need(1);
      return gelu(inputs[0]);
    case Primitive::sigmoid:
      need(1);
      return sigmoid(inputs[0]);
    case Primitive::exp:
      need(1);
      return exp_val(inputs[0]);
    case Primitive::add:
      need(2);
      return add(inputs[0], inputs[1]);
    case Primitive::mul:
      need(2);
      return mul(inputs[0], inputs[1]);
    case Primitive::bilinear_sample:
      need(2);
      return bilinear_sample(inputs[0], inputs[1]);
    case Primitive::maxpool2d: {
      if (inputs.size() != 1 && inputs.size() != 2)
        throw std::invalid_argument("maxpool2d: expects x[,k]");
      int k = inputs.size() == 2 ? static_cast<int>(inputs[1].value()) : 2;
      return maxpool2d(inputs[0], k);
    }
    case Primitive::global_avgpool:
      need(1);
      return global_avgpool(inputs[0]);
  }
  throw std::logic_error("unreachable");
}

}  // namespace m2m::diff
