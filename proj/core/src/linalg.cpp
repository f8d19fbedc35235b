#include "spda/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace spda::linalg {

namespace {

constexpr int kMaxSweeps = 64;

void check_finite(std::span<const double> x, const char* what) {
  for (double v : x) {
    if (!std::isfinite(v)) throw NumericError(std::string(what) + ": non-finite entry");
  }
}

double offdiag_norm(const std::vector<double>& w, int d) {
  double s = 0.0;
  for (int i = 0; i < d; ++i) {
    for (int j = i + 1; j < d; ++j) {
      const double v = w[static_cast<size_t>(i) * d + j];
      s += 2.0 * v * v;
    }
  }
  return std::sqrt(s);
}

}  // namespace

double EigenPair::reconstruction_residual(std::span<const double> x) const {
  const int d = dim;
  double num = 0.0, den = 0.0;
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      double y = 0.0;
      for (int k = 0; k < d; ++k) {
        y += eigenvectors[static_cast<size_t>(i) * d + k] * eigenvalues[static_cast<size_t>(k)] *
             eigenvectors[static_cast<size_t>(j) * d + k];
      }
      const double r = y - x[static_cast<size_t>(i) * d + j];
      num += r * r;
      den += x[static_cast<size_t>(i) * d + j] * x[static_cast<size_t>(i) * d + j];
    }
  }
  return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

double EigenPair::orthonormality_residual() const {
  return spda::linalg::orthonormality_residual(eigenvectors, dim, dim);
}

EigenPair sym_eig(std::span<const double> x, int d) {
  if (d < 1) throw ShapeError("sym_eig: dimension must be >= 1");
  if (static_cast<int>(x.size()) != d * d) throw ShapeError("sym_eig: size mismatch");
  check_finite(x, "sym_eig");

  // Work on the symmetrized copy.
  std::vector<double> w(static_cast<size_t>(d) * d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      w[static_cast<size_t>(i) * d + j] =
          0.5 * (x[static_cast<size_t>(i) * d + j] + x[static_cast<size_t>(j) * d + i]);
    }
  }

  std::vector<double> v(static_cast<size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i) v[static_cast<size_t>(i) * d + i] = 1.0;

  double norm = 0.0;
  for (double e : w) norm += e * e;
  norm = std::sqrt(norm);
  const double tol = 1e-14 * std::max(norm, 1e-300);

  bool converged = offdiag_norm(w, d) <= tol;
  for (int sweep = 0; sweep < kMaxSweeps && !converged; ++sweep) {
    for (int p = 0; p < d - 1; ++p) {
      for (int q = p + 1; q < d; ++q) {
        const double apq = w[static_cast<size_t>(p) * d + q];
        if (apq == 0.0) continue;
        const double app = w[static_cast<size_t>(p) * d + p];
        const double aqq = w[static_cast<size_t>(q) * d + q];
        const double theta = 0.5 * (aqq - app) / apq;
        const double t =
            (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;

        for (int k = 0; k < d; ++k) {
          const double wkp = w[static_cast<size_t>(k) * d + p];
          const double wkq = w[static_cast<size_t>(k) * d + q];
          w[static_cast<size_t>(k) * d + p] = c * wkp - s * wkq;
          w[static_cast<size_t>(k) * d + q] = s * wkp + c * wkq;
        }
        for (int k = 0; k < d; ++k) {
          const double wpk = w[static_cast<size_t>(p) * d + k];
          const double wqk = w[static_cast<size_t>(q) * d + k];
          w[static_cast<size_t>(p) * d + k] = c * wpk - s * wqk;
          w[static_cast<size_t>(q) * d + k] = s * wpk + c * wqk;
        }
        for (int k = 0; k < d; ++k) {
          const double vkp = v[static_cast<size_t>(k) * d + p];
          const double vkq = v[static_cast<size_t>(k) * d + q];
          v[static_cast<size_t>(k) * d + p] = c * vkp - s * vkq;
          v[static_cast<size_t>(k) * d + q] = s * vkp + c * vkq;
        }
      }
    }
    converged = offdiag_norm(w, d) <= tol;
  }
  if (!converged) {
    throw NumericError("sym_eig: Jacobi sweeps did not converge (ill-conditioned input)");
  }

  EigenPair out;
  out.dim = d;
  out.eigenvalues.resize(static_cast<size_t>(d));
  std::vector<int> order(static_cast<size_t>(d));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return w[static_cast<size_t>(a) * d + a] > w[static_cast<size_t>(b) * d + b];
  });

  out.eigenvectors.assign(static_cast<size_t>(d) * d, 0.0);
  for (int j = 0; j < d; ++j) {
    const int src = order[static_cast<size_t>(j)];
    out.eigenvalues[static_cast<size_t>(j)] = w[static_cast<size_t>(src) * d + src];
    // Sign convention: first nonzero component non-negative.
    double sign = 1.0;
    for (int i = 0; i < d; ++i) {
      const double e = v[static_cast<size_t>(i) * d + src];
      if (e != 0.0) {
        sign = e < 0.0 ? -1.0 : 1.0;
        break;
      }
    }
    for (int i = 0; i < d; ++i) {
      out.eigenvectors[static_cast<size_t>(i) * d + j] = sign * v[static_cast<size_t>(i) * d + src];
    }
  }
  return out;
}

std::vector<double> sym_matrix_function(std::span<const double> x, int d,
                                        const std::function<double(double)>& f,
                                        EigenPair* eig_out) {
  EigenPair eig = sym_eig(x, d);
  std::vector<double> fl(static_cast<size_t>(d));
  for (int i = 0; i < d; ++i) fl[static_cast<size_t>(i)] = f(eig.eigenvalues[static_cast<size_t>(i)]);

  std::vector<double> y(static_cast<size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i) {
    for (int j = i; j < d; ++j) {
      double s = 0.0;
      for (int k = 0; k < d; ++k) {
        s += eig.eigenvectors[static_cast<size_t>(i) * d + k] * fl[static_cast<size_t>(k)] *
             eig.eigenvectors[static_cast<size_t>(j) * d + k];
      }
      y[static_cast<size_t>(i) * d + j] = s;
      y[static_cast<size_t>(j) * d + i] = s;
    }
  }
  if (eig_out) *eig_out = std::move(eig);
  return y;
}

std::vector<double> sym_matrix_function_vjp(const EigenPair& eig,
                                            std::span<const double> grad_out,
                                            const std::function<double(double)>& f,
                                            const std::function<double(double)>& df) {
  const int d = eig.dim;
  if (static_cast<int>(grad_out.size()) != d * d) {
    throw ShapeError("sym_matrix_function_vjp: gradient size mismatch");
  }
  const auto& u = eig.eigenvectors;
  const auto& lam = eig.eigenvalues;
  const double tau = 1e-10 * std::max(1.0, std::abs(lam[0]));

  // M = U^T sym(G) U
  std::vector<double> sg(static_cast<size_t>(d) * d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      sg[static_cast<size_t>(i) * d + j] =
          0.5 * (grad_out[static_cast<size_t>(i) * d + j] + grad_out[static_cast<size_t>(j) * d + i]);
    }
  }
  std::vector<double> tmp(static_cast<size_t>(d) * d, 0.0);  // sym(G) U
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      double s = 0.0;
      for (int k = 0; k < d; ++k) {
        s += sg[static_cast<size_t>(i) * d + k] * u[static_cast<size_t>(k) * d + j];
      }
      tmp[static_cast<size_t>(i) * d + j] = s;
    }
  }
  std::vector<double> m(static_cast<size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      double s = 0.0;
      for (int k = 0; k < d; ++k) {
        s += u[static_cast<size_t>(k) * d + i] * tmp[static_cast<size_t>(k) * d + j];
      }
      m[static_cast<size_t>(i) * d + j] = s;
    }
  }

  // K o M with the divided-difference kernel.
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      const double gap = lam[static_cast<size_t>(i)] - lam[static_cast<size_t>(j)];
      double k;
      if (std::abs(gap) > tau) {
        k = (f(lam[static_cast<size_t>(i)]) - f(lam[static_cast<size_t>(j)])) / gap;
      } else {
        k = df(0.5 * (lam[static_cast<size_t>(i)] + lam[static_cast<size_t>(j)]));
      }
      m[static_cast<size_t>(i) * d + j] *= k;
    }
  }

  // U (K o M) U^T
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      double s = 0.0;
      for (int k = 0; k < d; ++k) {
        s += u[static_cast<size_t>(i) * d + k] * m[static_cast<size_t>(k) * d + j];
      }
      tmp[static_cast<size_t>(i) * d + j] = s;
    }
  }
  std::vector<double> dx(static_cast<size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      double s = 0.0;
      for (int k = 0; k < d; ++k) {
        s += tmp[static_cast<size_t>(i) * d + k] * u[static_cast<size_t>(j) * d + k];
      }
      dx[static_cast<size_t>(i) * d + j] = s;
    }
  }
  return dx;
}

std::vector<double> qr_orthonormalize(std::span<const double> a, int n, int p) {
  if (n < p || p < 1) throw ShapeError("qr_orthonormalize: need n >= p >= 1");
  if (static_cast<int>(a.size()) != n * p) throw ShapeError("qr_orthonormalize: size mismatch");
  check_finite(a, "qr_orthonormalize");

  std::vector<double> q(a.begin(), a.end());
  auto col_dot = [&](int i, int j) {
    double s = 0.0;
    for (int r = 0; r < n; ++r) {
      s += q[static_cast<size_t>(r) * p + i] * q[static_cast<size_t>(r) * p + j];
    }
    return s;
  };

  for (int j = 0; j < p; ++j) {
    // Two MGS passes keep orthogonality at machine precision.
    for (int pass = 0; pass < 2; ++pass) {
      for (int i = 0; i < j; ++i) {
        const double r = col_dot(i, j);
        for (int row = 0; row < n; ++row) {
          q[static_cast<size_t>(row) * p + j] -= r * q[static_cast<size_t>(row) * p + i];
        }
      }
    }
    const double norm = std::sqrt(col_dot(j, j));
    if (norm < 1e-12) {
      throw NumericError("qr_orthonormalize: rank deficiency at column " + std::to_string(j));
    }
    for (int row = 0; row < n; ++row) {
      q[static_cast<size_t>(row) * p + j] /= norm;
    }
  }
  return q;
}

double orthonormality_residual(std::span<const double> a, int n, int p) {
  double s = 0.0;
  for (int i = 0; i < p; ++i) {
    for (int j = 0; j < p; ++j) {
      double g = 0.0;
      for (int r = 0; r < n; ++r) {
        g += a[static_cast<size_t>(r) * p + i] * a[static_cast<size_t>(r) * p + j];
      }
      const double t = g - (i == j ? 1.0 : 0.0);
      s += t * t;
    }
  }
  return std::sqrt(s);
}

double min_eigenvalue(std::span<const double> x, int d) {
  const EigenPair eig = sym_eig(x, d);
  return eig.eigenvalues.back();
}

}  // namespace spda::linalg
