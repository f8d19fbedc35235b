#pragma once

#include "spda/linalg.hpp"
#include "spda/ops.hpp"

namespace spda::ops {

// Second-order pooling: reshapes [C,H,W,D] (or [B,C,H,W,D], per batch
// element) to R in R^{C x N} and returns (1/N) R R^T + gamma I with
// gamma = 1e-5 * max(trace/C, 1e-12). The jitter keeps the descriptor
// strictly positive definite even for collinear channels or N < C.
Tensor spd_pool(const Tensor& features);

// Bilinear map W^T X W with W = weight (d_in x d_out column-orthonormal).
// x is [d,d] or [B,d,d].
Tensor bimap(const Tensor& x, const Tensor& weight);

// Spectral floor: U max(eps I, Sigma) U^T. Subgradient at an eigenvalue
// exactly equal to eps is taken as 0.
Tensor reeig(const Tensor& x, double epsilon = 1e-4);

// Matrix logarithm U log(Sigma) U^T; every eigenvalue must be positive.
Tensor logeig(const Tensor& x);

// Matrix exponential; inverse of logeig on its range.
Tensor expeig(const Tensor& x);

// Row-major upper-triangle scan (i <= j) of a symmetric [d,d] (or [B,d,d])
// matrix into a length d(d+1)/2 vector. With isometric set, off-diagonal
// entries are scaled by sqrt(2) so the Euclidean inner product of vectors
// equals the Frobenius inner product of matrices.
Tensor upper_triangle_vec(const Tensor& x, bool isometric = true);

// bimap to d/2 followed by reeig; d must be even.
Tensor bire_block(const Tensor& x, const Tensor& weight, double epsilon = 1e-4);

}  // namespace spda::ops

namespace spda {

// BiMap + ReEig with a column-orthonormal weight initialized from the QR of
// a seeded Gaussian matrix. The weight lives on the Stiefel manifold and is
// updated by optim::stiefel_step.
struct BiReBlock {
  Tensor weight;  // [dim, dim/2]
  int input_dim = 0;
  int output_dim = 0;
  double epsilon = 1e-4;

  BiReBlock() = default;
  BiReBlock(int dim, double eps, uint64_t seed);

  Tensor forward(const Tensor& x) const { return ops::bire_block(x, weight, epsilon); }
  double orthonormality_residual() const;
};

// Smallest eigenvalue over all matrices of a [d,d] or [B,d,d] tensor.
double spd_min_eigenvalue(const Tensor& x);
bool is_spd(const Tensor& x, double* lambda_min = nullptr);

}  // namespace spda
