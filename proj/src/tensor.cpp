#include "m2m/tensor.hpp"

#include <stdexcept>
#include <string>

namespace m2m::diff {

namespace {
thread_local std::vector<Tape*> g_tape_stack;
}

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int e : shape) {
    if (e <= 0) throw std::invalid_argument("tensor extent must be positive");
    n *= e;
  }
  return n;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->data.assign(static_cast<std::size_t>(shape_numel(shape)), 0.0);
  t.impl_->shape = std::move(shape);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (double& v : t.impl_->data) v = value;
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values,
                         bool requires_grad) {
  if (shape_numel(shape) != static_cast<std::int64_t>(values.size()))
    throw std::invalid_argument("from_data: shape/value count mismatch");
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data = std::move(values);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
  if (!impl_) throw std::logic_error("shape() on undefined tensor");
  return impl_->shape;
}

int Tensor::rank() const { return static_cast<int>(shape().size()); }

int Tensor::dim(int axis) const {
  const Shape& s = shape();
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    throw std::out_of_range("dim axis out of range");
  return s[axis];
}

std::int64_t Tensor::numel() const {
  return static_cast<std::int64_t>(impl_->data.size());
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  if (!impl_) throw std::logic_error("set_requires_grad on undefined tensor");
  impl_->requires_grad = flag;
}

std::span<const double> Tensor::data() const {
  if (!impl_) throw std::logic_error("data() on undefined tensor");
  return {impl_->data.data(), impl_->data.size()};
}

std::span<double> Tensor::raw_data() {
  if (!impl_) throw std::logic_error("raw_data() on undefined tensor");
  return {impl_->data.data(), impl_->data.size()};
}

double Tensor::value() const {
  if (numel() != 1) throw std::invalid_argument("value() needs numel()==1");
  return impl_->data[0];
}

double Tensor::at(std::initializer_list<int> index) const {
  const Shape& s = shape();
  if (index.size() != s.size())
    throw std::invalid_argument("at(): index rank mismatch");
  std::int64_t flat = 0;
  int axis = 0;
  for (int i : index) {
    if (i < 0 || i >= s[axis]) throw std::out_of_range("at(): index out of range");
    flat = flat * s[axis] + i;
    ++axis;
  }
  return impl_->data[static_cast<std::size_t>(flat)];
}

Tensor Tensor::detached_copy() const {
  if (!impl_) return {};
  return from_data(impl_->shape, impl_->data, false);
}

Tape::Tape() { g_tape_stack.push_back(this); }

Tape::~Tape() {
  if (!g_tape_stack.empty() && g_tape_stack.back() == this)
    g_tape_stack.pop_back();
}

Tape* Tape::active() {
  return g_tape_stack.empty() ? nullptr : g_tape_stack.back();
}

void Tape::record(std::function<void(Tape&)> backward) {
  nodes_.push_back(std::move(backward));
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw std::invalid_argument("backward() expects a scalar loss");
  grads_.clear();
  grad_buf(loss)[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)(*this);
}

Tensor Tape::grad(const Tensor& t) const {
  auto it = grads_.find(t.id());
  if (it == grads_.end()) return Tensor::zeros(t.shape());
  return Tensor::from_data(t.shape(), it->second);
}

std::vector<double>& Tape::grad_buf(const Tensor& t) {
  auto [it, inserted] = grads_.try_emplace(t.id());
  if (inserted) it->second.assign(static_cast<std::size_t>(t.numel()), 0.0);
  return it->second;
}

const std::vector<double>* Tape::find_grad(const Tensor& t) const {
  auto it = grads_.find(t.id());
  return it == grads_.end() ? nullptr : &it->second;
}

NoTapeGuard::NoTapeGuard() { g_tape_stack.push_back(nullptr); }

NoTapeGuard::~NoTapeGuard() {
  if (!g_tape_stack.empty() && g_tape_stack.back() == nullptr)
    g_tape_stack.pop_back();
}

}  // namespace m2m::diff
