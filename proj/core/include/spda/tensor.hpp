#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "spda/common.hpp"

namespace spda {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl {
  Shape shape;
  std::vector<double> data;  // row-major
  std::vector<double> grad;  // same size as data when requires_grad
  bool requires_grad = false;
  bool leaf = true;
};

// Shared-handle dense double tensor. Copying a Tensor aliases the same
// storage; clone() makes a detached deep copy. Rank-0 tensors (shape {})
// are scalars with numel 1.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value);
  static Tensor ones(Shape shape);
  static Tensor scalar(double value);
  static Tensor from_vector(Shape shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi,
                        bool requires_grad = false);
  static Tensor normal(Shape shape, Rng& rng, double mean, double stddev,
                       bool requires_grad = false);
  static Tensor wrap(std::shared_ptr<TensorImpl> impl);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  int64_t dim(int axis) const;
  int64_t numel() const;

  std::span<double> values();
  std::span<const double> values() const;
  double item() const;
  double& at(std::initializer_list<int64_t> index);
  double at(std::initializer_list<int64_t> index) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const;
  std::span<double> grad();
  std::span<const double> grad() const;
  void zero_grad();

  Tensor clone() const;

  std::shared_ptr<TensorImpl> impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  std::shared_ptr<TensorImpl> impl_;
};

// Throws NumericError naming the first non-finite entry.
void assert_finite(const Tensor& t, std::string_view what);
bool all_finite(const Tensor& t);

}  // namespace spda
