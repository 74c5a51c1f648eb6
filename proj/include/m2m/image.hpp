#pragma once

#include <stdexcept>
#include <string>

#include "m2m/tensor.hpp"

namespace m2m::io {

using diff::Tensor;

enum class ImageErrorKind { unsupported_depth, parse, io };

class image_error : public std::runtime_error {
 public:
  image_error(ImageErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ImageErrorKind kind() const { return kind_; }

 private:
  ImageErrorKind kind_;
};

// 8-bit PNG or binary PPM (chosen by extension); values map linearly
// between [0,255] and [0,1]. 16-bit inputs are rejected.
Tensor read_image(const std::string& path);              // -> {C,H,W}
void write_image(const std::string& path, const Tensor& frame);

Tensor read_ppm(const std::string& path);
void write_ppm(const std::string& path, const Tensor& frame);
Tensor read_png(const std::string& path);
void write_png(const std::string& path, const Tensor& frame);

}  // namespace m2m::io
