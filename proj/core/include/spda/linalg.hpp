#pragma once

#include <functional>
#include <span>
#include <vector>

#include "spda/common.hpp"

namespace spda::linalg {

// Eigendecomposition of a symmetric matrix. Eigenvalues are sorted
// descending; eigenvectors is row-major d*d with column j paired with
// eigenvalues[j]. Sign convention: the first nonzero entry of each
// eigenvector is non-negative.
struct EigenPair {
  int dim = 0;
  std::vector<double> eigenvalues;
  std::vector<double> eigenvectors;

  double reconstruction_residual(std::span<const double> x) const;
  double orthonormality_residual() const;
};

// Cyclic Jacobi. The input is symmetrized as (X + X^T)/2 before
// decomposition. Throws NumericError on non-finite entries or if the sweep
// cap is exceeded.
EigenPair sym_eig(std::span<const double> x, int d);

// Y = U f(L) U^T. Forward path of the spectral matrix function; eig_out,
// when non-null, receives the decomposition for a later vjp call.
std::vector<double> sym_matrix_function(std::span<const double> x, int d,
                                        const std::function<double(double)>& f,
                                        EigenPair* eig_out = nullptr);

// Daleckii-Krein differential: maps an output gradient G to
//   U (K o (U^T sym(G) U)) U^T
// with K_ij = (f(li) - f(lj)) / (li - lj) when |li - lj| > tau and
// K_ij = f'((li + lj)/2) otherwise; tau = 1e-10 * max(1, |l1|).
std::vector<double> sym_matrix_function_vjp(const EigenPair& eig,
                                            std::span<const double> grad_out,
                                            const std::function<double(double)>& f,
                                            const std::function<double(double)>& df);

// Thin QR orthonormalization of an n x p matrix (n >= p), row-major.
// Modified Gram-Schmidt with a reorthogonalization pass; R's diagonal is
// positive by construction. Throws NumericError when a diagonal entry of R
// falls below 1e-12 (rank deficiency).
std::vector<double> qr_orthonormalize(std::span<const double> a, int n, int p);

// ||A^T A - I_p||_F for a row-major n x p matrix.
double orthonormality_residual(std::span<const double> a, int n, int p);

double min_eigenvalue(std::span<const double> x, int d);

}  // namespace spda::linalg
