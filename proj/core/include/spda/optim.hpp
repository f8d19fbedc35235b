#pragma once

#include <span>
#include <vector>

#include "spda/tensor.hpp"

namespace spda::optim {

// RMSprop state for one Euclidean parameter.
//   square_avg <- alpha * square_avg + (1 - alpha) * grad^2
//   param      <- param - lr * grad / (sqrt(square_avg) + eps)
struct RmspropState {
  std::vector<double> square_avg;
  double lr = 1e-4;
  double alpha = 0.99;
  double eps = 1e-8;

  RmspropState() = default;
  RmspropState(size_t n, double lr_, double alpha_ = 0.99, double eps_ = 1e-8)
      : square_avg(n, 0.0), lr(lr_), alpha(alpha_), eps(eps_) {}
};

void rmsprop_step(std::span<double> param, std::span<const double> grad, RmspropState& state);
void rmsprop_step(Tensor& param, RmspropState& state);

// Riemannian gradient descent on the Stiefel manifold of column-orthonormal
// n x p matrices (embedded metric):
//   tangent  G~ = G - A sym(A^T G),  sym(M) = (M + M^T)/2
//   retract  A <- qr_orthonormalize(A - lr * G~)
// A zero gradient leaves the parameter bitwise unchanged.
void stiefel_step(std::span<double> param, int n, int p, std::span<const double> grad, double lr);
void stiefel_step(Tensor& param, double lr);

}  // namespace spda::optim
