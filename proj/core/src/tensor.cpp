#include "spda/tensor.hpp"

#include <cmath>
#include <sstream>

namespace spda {

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

namespace {

std::shared_ptr<TensorImpl> make_impl(Shape shape) {
  for (int64_t d : shape) {
    if (d <= 0) throw ShapeError("tensor dimension must be positive, got " + shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data.assign(static_cast<size_t>(shape_numel(impl->shape)), 0.0);
  return impl;
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  Tensor t(make_impl(std::move(shape)));
  if (requires_grad) t.set_requires_grad(true);
  return t;
}

Tensor Tensor::full(Shape shape, double value) {
  Tensor t(make_impl(std::move(shape)));
  for (double& v : t.impl_->data) v = value;
  return t;
}

Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::scalar(double value) {
  Tensor t(make_impl(Shape{}));
  t.impl_->data[0] = value;
  return t;
}

Tensor Tensor::from_vector(Shape shape, std::vector<double> values, bool requires_grad) {
  if (static_cast<int64_t>(values.size()) != shape_numel(shape)) {
    throw ShapeError("from_vector: " + std::to_string(values.size()) +
                     " values for shape " + shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  Tensor t(std::move(impl));
  if (requires_grad) t.set_requires_grad(true);
  return t;
}

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad) {
  Tensor t(make_impl(std::move(shape)));
  for (double& v : t.impl_->data) v = rng.uniform(lo, hi);
  if (requires_grad) t.set_requires_grad(true);
  return t;
}

Tensor Tensor::normal(Shape shape, Rng& rng, double mean, double stddev, bool requires_grad) {
  Tensor t(make_impl(std::move(shape)));
  for (double& v : t.impl_->data) v = rng.normal(mean, stddev);
  if (requires_grad) t.set_requires_grad(true);
  return t;
}

Tensor Tensor::wrap(std::shared_ptr<TensorImpl> impl) { return Tensor(std::move(impl)); }

const Shape& Tensor::shape() const {
  if (!impl_) throw Error("use of undefined tensor");
  return impl_->shape;
}

int64_t Tensor::dim(int axis) const {
  const Shape& s = shape();
  if (axis < 0 || axis >= static_cast<int>(s.size())) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  return s[static_cast<size_t>(axis)];
}

int64_t Tensor::numel() const { return static_cast<int64_t>(shape().empty() ? 1 : shape_numel(shape())); }

std::span<double> Tensor::values() {
  if (!impl_) throw Error("use of undefined tensor");
  return impl_->data;
}

std::span<const double> Tensor::values() const {
  if (!impl_) throw Error("use of undefined tensor");
  return impl_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item(): tensor has shape " + shape_str(shape()));
  return impl_->data[0];
}

namespace {
size_t flat_index(const Shape& shape, std::initializer_list<int64_t> index) {
  if (index.size() != shape.size()) {
    throw ShapeError("index rank mismatch for shape " + shape_str(shape));
  }
  size_t flat = 0;
  size_t axis = 0;
  for (int64_t i : index) {
    if (i < 0 || i >= shape[axis]) {
      throw ShapeError("index out of bounds for shape " + shape_str(shape));
    }
    flat = flat * static_cast<size_t>(shape[axis]) + static_cast<size_t>(i);
    ++axis;
  }
  return flat;
}
}  // namespace

double& Tensor::at(std::initializer_list<int64_t> index) {
  return impl_->data[flat_index(shape(), index)];
}

double Tensor::at(std::initializer_list<int64_t> index) const {
  return impl_->data[flat_index(shape(), index)];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  if (!impl_) throw Error("use of undefined tensor");
  if (!impl_->leaf) throw Error("set_requires_grad: only leaf tensors can be toggled");
  impl_->requires_grad = on;
  if (on) {
    impl_->grad.assign(impl_->data.size(), 0.0);
  } else {
    impl_->grad.clear();
  }
  return *this;
}

bool Tensor::is_leaf() const { return impl_ && impl_->leaf; }

std::span<double> Tensor::grad() {
  if (!requires_grad()) throw Error("grad(): tensor does not require grad");
  return impl_->grad;
}

std::span<const double> Tensor::grad() const {
  if (!requires_grad()) throw Error("grad(): tensor does not require grad");
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_ && impl_->requires_grad) {
    for (double& g : impl_->grad) g = 0.0;
  }
}

Tensor Tensor::clone() const {
  if (!impl_) return Tensor();
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  return Tensor(std::move(impl));
}

bool all_finite(const Tensor& t) {
  for (double v : t.values()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void assert_finite(const Tensor& t, std::string_view what) {
  auto vals = t.values();
  for (size_t i = 0; i < vals.size(); ++i) {
    if (!std::isfinite(vals[i])) {
      throw NumericError(std::string(what) + ": non-finite value at flat index " +
                         std::to_string(i));
    }
  }
}

}  // namespace spda
