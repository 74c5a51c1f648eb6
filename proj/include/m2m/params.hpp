#pragma once

#include <string>
#include <utility>
#include <vector>

#include "m2m/tensor.hpp"

namespace m2m::diff {

// Ordered name -> tensor container with a flat binary file format:
// magic "M2MP", version u32, then per entry: name length u16, name bytes,
// rank u8, extents u32 each, f64 payload. All integers and doubles are
// little-endian.
class ParamPack {
 public:
  void add(std::string name, Tensor t);
  Tensor* find(std::string_view name);
  const Tensor* find(std::string_view name) const;

  std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }
  const std::vector<std::pair<std::string, Tensor>>& entries() const {
    return entries_;
  }

  std::vector<Tensor> tensors() const;

  void save(const std::string& path) const;
  static ParamPack load(const std::string& path);

  // Copies values from `src` into same-named entries (shapes must match).
  void assign_from(const ParamPack& src);

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

}  // namespace m2m::diff
