#include "m2m/flo.hpp"

#include <cstdint>
#include <cstdio>
#include <memory>
#include <vector>

namespace m2m::io {

namespace {
constexpr float kFloMagic = 202021.25f;

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;
}  // namespace

Tensor read_flo(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw flo_error(FloErrorKind::io, "cannot open " + path);

  float magic = 0.0f;
  std::int32_t w = 0, h = 0;
  if (std::fread(&magic, sizeof(magic), 1, f.get()) != 1)
    throw flo_error(FloErrorKind::truncated, "truncated header in " + path);
  if (magic != kFloMagic)
    throw flo_error(FloErrorKind::bad_magic, "bad .flo magic in " + path);
  if (std::fread(&w, sizeof(w), 1, f.get()) != 1 ||
      std::fread(&h, sizeof(h), 1, f.get()) != 1)
    throw flo_error(FloErrorKind::truncated, "truncated header in " + path);
  if (w <= 0 || h <= 0)
    throw flo_error(FloErrorKind::bad_dims, "non-positive dimensions in " + path);

  const std::size_t count = static_cast<std::size_t>(w) * h * 2;
  std::vector<float> raw(count);
  if (std::fread(raw.data(), sizeof(float), count, f.get()) != count)
    throw flo_error(FloErrorKind::truncated, "truncated payload in " + path);

  // deinterleave (dx,dy) pairs into channel planes
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  std::vector<double> data(static_cast<std::size_t>(2) * plane);
  for (std::int64_t p = 0; p < plane; ++p) {
    data[p] = static_cast<double>(raw[2 * p]);
    data[plane + p] = static_cast<double>(raw[2 * p + 1]);
  }
  return Tensor::from_data({2, h, w}, std::move(data));
}

void write_flo(const std::string& path, const Tensor& flow) {
  if (flow.rank() != 3 || flow.dim(0) != 2)
    throw std::invalid_argument("write_flo: expects {2,H,W}");
  const std::int32_t h = flow.dim(1), w = flow.dim(2);
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw flo_error(FloErrorKind::io, "cannot open for writing " + path);

  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  std::vector<float> raw(static_cast<std::size_t>(2) * plane);
  for (std::int64_t p = 0; p < plane; ++p) {
    raw[2 * p] = static_cast<float>(flow.data()[p]);
    raw[2 * p + 1] = static_cast<float>(flow.data()[plane + p]);
  }
  float magic = kFloMagic;
  if (std::fwrite(&magic, sizeof(magic), 1, f.get()) != 1 ||
      std::fwrite(&w, sizeof(w), 1, f.get()) != 1 ||
      std::fwrite(&h, sizeof(h), 1, f.get()) != 1 ||
      std::fwrite(raw.data(), sizeof(float), raw.size(), f.get()) != raw.size())
    throw flo_error(FloErrorKind::io, "write failed for " + path);
}

}  // namespace m2m::io
