#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <unordered_map>
#include <vector>

namespace m2m::diff {

using Shape = std::vector<int>;

std::int64_t shape_numel(const Shape& shape);

// Dense row-major f64 tensor. The payload is immutable once the tensor has
// been recorded on a tape; raw_data() exists for construction and for
// optimizer updates between graphs.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> values,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int rank() const;
  int dim(int axis) const;
  std::int64_t numel() const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);

  std::span<const double> data() const;
  std::span<double> raw_data();

  double value() const;  // numel() == 1
  double at(std::initializer_list<int> index) const;

  // Fresh storage, same values, no gradient tracking.
  Tensor detached_copy() const;

  // Stable identity for gradient accumulation.
  const void* id() const { return impl_.get(); }

 private:
  struct Impl {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
};

// Reverse-mode tape. Constructing a Tape makes it the active tape of the
// current thread; ops record a backward node when an input requires grad.
// Each tape is single-threaded; independent tapes may live on different
// threads with no shared state.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  // The closure must accumulate into grad_buf() of its inputs. Nodes run
  // exactly once each, in reverse recording order.
  void record(std::function<void(Tape&)> backward);

  void backward(const Tensor& loss);

  Tensor grad(const Tensor& t) const;

  std::vector<double>& grad_buf(const Tensor& t);
  const std::vector<double>* find_grad(const Tensor& t) const;

 private:
  std::vector<std::function<void(Tape&)>> nodes_;
  std::unordered_map<const void*, std::vector<double>> grads_;
};

// Suppresses recording for the current thread while alive (used by the
// finite-difference side of gradcheck).
class NoTapeGuard {
 public:
  NoTapeGuard();
  ~NoTapeGuard();
  NoTapeGuard(const NoTapeGuard&) = delete;
  NoTapeGuard& operator=(const NoTapeGuard&) = delete;
};

}  // namespace m2m::diff
