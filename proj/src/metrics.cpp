#include "m2m/metrics.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace m2m::metrics {

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kK1 = 0.01;
constexpr double kK2 = 0.03;

std::vector<double> gaussian_kernel() {
  std::vector<double> k(kWindow);
  double sum = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    double d = i - (kWindow - 1) / 2.0;
    k[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

std::vector<double> luma(const Tensor& t) {
  if (t.rank() != 3) throw std::invalid_argument("ssim: expects {C,H,W}");
  const int c = t.dim(0), h = t.dim(1), w = t.dim(2);
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  std::vector<double> out(static_cast<std::size_t>(plane));
  if (c == 1) {
    for (std::int64_t i = 0; i < plane; ++i) out[i] = t.data()[i];
  } else if (c == 3) {
    for (std::int64_t i = 0; i < plane; ++i)
      out[i] = 0.299 * t.data()[i] + 0.587 * t.data()[plane + i] +
               0.114 * t.data()[2 * plane + i];
  } else {
    throw std::invalid_argument("ssim: expects 1 or 3 channels");
  }
  return out;
}

// separable valid-region Gaussian filter: rows then columns
std::vector<double> filter_valid(const std::vector<double>& img, int h, int w,
                                 const std::vector<double>& k) {
  const int vw = w - kWindow + 1;
  const int vh = h - kWindow + 1;
  std::vector<double> rows(static_cast<std::size_t>(h) * vw);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < vw; ++x) {
      double acc = 0.0;
      for (int i = 0; i < kWindow; ++i) acc += k[i] * img[y * w + x + i];
      rows[y * vw + x] = acc;
    }
  std::vector<double> out(static_cast<std::size_t>(vh) * vw);
  for (int y = 0; y < vh; ++y)
    for (int x = 0; x < vw; ++x) {
      double acc = 0.0;
      for (int i = 0; i < kWindow; ++i) acc += k[i] * rows[(y + i) * vw + x];
      out[y * vw + x] = acc;
    }
  return out;
}

}  // namespace

double psnr(const Tensor& a, const Tensor& b, double peak) {
  if (a.shape() != b.shape()) throw std::invalid_argument("psnr: shape mismatch");
  double mse = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    double d = a.data()[i] - b.data()[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.numel());
  if (mse == 0.0) return 99.0;
  return 10.0 * std::log10(peak * peak / mse);
}

double ssim(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("ssim: shape mismatch");
  const int h = a.dim(1), w = a.dim(2);
  if (h < kWindow || w < kWindow)
    throw std::invalid_argument("ssim: frame smaller than the 11x11 window");
  std::vector<double> la = luma(a), lb = luma(b);
  std::vector<double> laa(la.size()), lbb(la.size()), lab(la.size());
  for (std::size_t i = 0; i < la.size(); ++i) {
    laa[i] = la[i] * la[i];
    lbb[i] = lb[i] * lb[i];
    lab[i] = la[i] * lb[i];
  }
  const std::vector<double> k = gaussian_kernel();
  std::vector<double> mu_a = filter_valid(la, h, w, k);
  std::vector<double> mu_b = filter_valid(lb, h, w, k);
  std::vector<double> m_aa = filter_valid(laa, h, w, k);
  std::vector<double> m_bb = filter_valid(lbb, h, w, k);
  std::vector<double> m_ab = filter_valid(lab, h, w, k);

  const double c1 = kK1 * kK1, c2 = kK2 * kK2;
  double acc = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    double va = m_aa[i] - mu_a[i] * mu_a[i];
    double vb = m_bb[i] - mu_b[i] * mu_b[i];
    double cov = m_ab[i] - mu_a[i] * mu_b[i];
    double num = (2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2);
    double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2);
    acc += num / den;
  }
  return acc / static_cast<double>(mu_a.size());
}

}  // namespace m2m::metrics
