#pragma once

#include <stdexcept>
#include <string>

#include "m2m/tensor.hpp"

namespace m2m::io {

using diff::Tensor;

// Middlebury .flo: float magic 202021.25 ("PIEH"), width i32, height i32,
// then row-major interleaved (dx, dy) f32 pairs, all little-endian.

enum class FloErrorKind { bad_magic, truncated, bad_dims, io };

class flo_error : public std::runtime_error {
 public:
  flo_error(FloErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  FloErrorKind kind() const { return kind_; }

 private:
  FloErrorKind kind_;
};

Tensor read_flo(const std::string& path);               // -> {2,H,W}
void write_flo(const std::string& path, const Tensor& flow);

}  // namespace m2m::io
