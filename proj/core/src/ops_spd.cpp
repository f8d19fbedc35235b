#include <cmath>

#include "spda/spd_layers.hpp"

namespace spda::ops {

using detail::make_result;

namespace {

// [d,d] -> {1,d}; [B,d,d] -> {B,d}. Throws otherwise.
std::pair<int64_t, int64_t> square_batch_dims(const Tensor& x, const char* op) {
  if (x.rank() == 2 && x.dim(0) == x.dim(1)) return {1, x.dim(0)};
  if (x.rank() == 3 && x.dim(1) == x.dim(2)) return {x.dim(0), x.dim(1)};
  throw ShapeError(std::string(op) + ": expected [d,d] or [B,d,d], got " + shape_str(x.shape()));
}

struct SymFnSpec {
  std::function<double(double)> f;
  std::function<double(double)> df;
  const char* name;
};

Tensor sym_matrix_fn(const Tensor& x, const SymFnSpec& spec) {
  const auto [batch, d] = square_batch_dims(x, spec.name);
  Tensor out = make_result(x.shape(), {&x});
  auto xv = x.values();
  auto ov = out.values();
  const int64_t sz = d * d;

  std::vector<linalg::EigenPair> eigs;
  eigs.reserve(static_cast<size_t>(batch));
  for (int64_t bidx = 0; bidx < batch; ++bidx) {
    linalg::EigenPair eig;
    std::vector<double> y = linalg::sym_matrix_function(
        std::span<const double>(xv.data() + bidx * sz, static_cast<size_t>(sz)),
        static_cast<int>(d), spec.f, &eig);
    for (int64_t i = 0; i < sz; ++i) ov[static_cast<size_t>(bidx * sz + i)] = y[static_cast<size_t>(i)];
    eigs.push_back(std::move(eig));
  }

  if (out.requires_grad()) {
    auto xi = x.impl();
    auto oi = out.impl();
    Tape::get().record([xi, oi, eigs = std::move(eigs), spec, batch, sz] {
      if (!xi->requires_grad) return;
      for (int64_t bidx = 0; bidx < batch; ++bidx) {
        std::vector<double> dx = linalg::sym_matrix_function_vjp(
            eigs[static_cast<size_t>(bidx)],
            std::span<const double>(oi->grad.data() + bidx * sz, static_cast<size_t>(sz)), spec.f,
            spec.df);
        for (int64_t i = 0; i < sz; ++i) {
          xi->grad[static_cast<size_t>(bidx * sz + i)] += dx[static_cast<size_t>(i)];
        }
      }
    });
  }
  return out;
}

}  // namespace

Tensor spd_pool(const Tensor& features) {
  int64_t batch = 1;
  int64_t c, n;
  if (features.rank() == 4) {
    c = features.dim(0);
    n = features.dim(1) * features.dim(2) * features.dim(3);
  } else if (features.rank() == 5) {
    batch = features.dim(0);
    c = features.dim(1);
    n = features.dim(2) * features.dim(3) * features.dim(4);
  } else {
    throw ShapeError("spd_pool: expected [C,H,W,D] or [B,C,H,W,D], got " +
                     shape_str(features.shape()));
  }
  assert_finite(features, "spd_pool");

  Shape out_shape = features.rank() == 4 ? Shape{c, c} : Shape{batch, c, c};
  Tensor out = make_result(std::move(out_shape), {&features});
  auto fv = features.values();
  auto ov = out.values();
  const double inv_n = 1.0 / static_cast<double>(n);

  std::vector<uint8_t> jitter_active(static_cast<size_t>(batch), 0);
  for (int64_t bidx = 0; bidx < batch; ++bidx) {
    const double* r = fv.data() + bidx * c * n;
    double* g = ov.data() + bidx * c * c;
    double trace = 0.0;
    for (int64_t i = 0; i < c; ++i) {
      for (int64_t j = i; j < c; ++j) {
        const double* ri = r + i * n;
        const double* rj = r + j * n;
        double s = 0.0;
        for (int64_t k = 0; k < n; ++k) s += ri[k] * rj[k];
        s *= inv_n;
        g[i * c + j] = s;
        g[j * c + i] = s;
        if (i == j) trace += s;
      }
    }
    const double scaled = trace / static_cast<double>(c);
    jitter_active[static_cast<size_t>(bidx)] = scaled > 1e-12 ? 1 : 0;
    const double gamma = 1e-5 * std::max(scaled, 1e-12);
    for (int64_t i = 0; i < c; ++i) g[i * c + i] += gamma;
  }

  if (out.requires_grad()) {
    auto fi = features.impl();
    auto oi = out.impl();
    Tape::get().record([fi, oi, jitter_active = std::move(jitter_active), batch, c, n, inv_n] {
      if (!fi->requires_grad) return;
      for (int64_t bidx = 0; bidx < batch; ++bidx) {
        const double* r = fi->data.data() + bidx * c * n;
        const double* g = oi->grad.data() + bidx * c * c;
        double* gr = fi->grad.data() + bidx * c * n;
        // d/dR of <G, (1/N) R R^T> = (1/N)(G + G^T) R
        for (int64_t i = 0; i < c; ++i) {
          for (int64_t j = 0; j < c; ++j) {
            const double coeff = (g[i * c + j] + g[j * c + i]) * inv_n;
            if (coeff == 0.0) continue;
            const double* rj = r + j * n;
            double* gi = gr + i * n;
            for (int64_t k = 0; k < n; ++k) gi[k] += coeff * rj[k];
          }
        }
        // Jitter term: gamma = 1e-5 * trace/C on the active branch and
        // trace = (1/N) ||R||_F^2, so dgamma/dR = (2e-5 / (C N)) R.
        if (jitter_active[static_cast<size_t>(bidx)]) {
          double gdiag = 0.0;
          for (int64_t i = 0; i < c; ++i) gdiag += g[i * c + i];
          const double coeff = gdiag * 1e-5 / static_cast<double>(c) * 2.0 * inv_n;
          if (coeff != 0.0) {
            for (int64_t i = 0; i < c * n; ++i) gr[i] += coeff * r[i];
          }
        }
      }
    });
  }
  return out;
}

Tensor bimap(const Tensor& x, const Tensor& weight) {
  const auto [batch, din] = square_batch_dims(x, "bimap");
  if (weight.rank() != 2 || weight.dim(0) != din) {
    throw ShapeError("bimap: weight " + shape_str(weight.shape()) + " does not match input dim " +
                     std::to_string(din));
  }
  const int64_t dout = weight.dim(1);
  if (dout > din) throw ShapeError("bimap: output dim must not exceed input dim");

  Shape out_shape = x.rank() == 2 ? Shape{dout, dout} : Shape{batch, dout, dout};
  Tensor out = make_result(std::move(out_shape), {&x, &weight});
  auto xv = x.values();
  auto wv = weight.values();
  auto ov = out.values();

  // Y = A^T X A with A = weight.
  std::vector<double> xa(static_cast<size_t>(din) * dout);
  for (int64_t bidx = 0; bidx < batch; ++bidx) {
    const double* xb = xv.data() + bidx * din * din;
    double* yb = ov.data() + bidx * dout * dout;
    for (int64_t i = 0; i < din; ++i) {
      for (int64_t j = 0; j < dout; ++j) {
        double s = 0.0;
        for (int64_t k = 0; k < din; ++k) s += xb[i * din + k] * wv[static_cast<size_t>(k * dout + j)];
        xa[static_cast<size_t>(i * dout + j)] = s;
      }
    }
    for (int64_t i = 0; i < dout; ++i) {
      for (int64_t j = 0; j < dout; ++j) {
        double s = 0.0;
        for (int64_t k = 0; k < din; ++k) s += wv[static_cast<size_t>(k * dout + i)] * xa[static_cast<size_t>(k * dout + j)];
        yb[i * dout + j] = s;
      }
    }
  }

  if (out.requires_grad()) {
    auto xi = x.impl();
    auto wi = weight.impl();
    auto oi = out.impl();
    Tape::get().record([xi, wi, oi, batch, din, dout] {
      std::vector<double> ag(static_cast<size_t>(din) * dout);
      for (int64_t bidx = 0; bidx < batch; ++bidx) {
        const double* g = oi->grad.data() + bidx * dout * dout;
        const double* xb = xi->data.data() + bidx * din * din;
        // A G (din x dout)
        for (int64_t i = 0; i < din; ++i) {
          for (int64_t j = 0; j < dout; ++j) {
            double s = 0.0;
            for (int64_t k = 0; k < dout; ++k) s += wi->data[static_cast<size_t>(i * dout + k)] * g[k * dout + j];
            ag[static_cast<size_t>(i * dout + j)] = s;
          }
        }
        if (xi->requires_grad) {
          // dX = A G A^T
          double* gx = xi->grad.data() + bidx * din * din;
          for (int64_t i = 0; i < din; ++i) {
            for (int64_t j = 0; j < din; ++j) {
              double s = 0.0;
              for (int64_t k = 0; k < dout; ++k) {
                s += ag[static_cast<size_t>(i * dout + k)] * wi->data[static_cast<size_t>(j * dout + k)];
              }
              gx[i * din + j] += s;
            }
          }
        }
        if (wi->requires_grad) {
          // dA = X A G^T + X^T A G
          for (int64_t i = 0; i < din; ++i) {
            for (int64_t j = 0; j < dout; ++j) {
              double s = 0.0;
              for (int64_t k = 0; k < din; ++k) {
                double agt = 0.0;  // (A G^T)(k, j)
                double agg = 0.0;  // (A G)(k, j)
                for (int64_t l = 0; l < dout; ++l) {
                  agt += wi->data[static_cast<size_t>(k * dout + l)] * g[j * dout + l];
                  agg += wi->data[static_cast<size_t>(k * dout + l)] * g[l * dout + j];
                }
                s += xb[i * din + k] * agt + xb[k * din + i] * agg;
              }
              wi->grad[static_cast<size_t>(i * dout + j)] += s;
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor reeig(const Tensor& x, double epsilon) {
  assert_finite(x, "reeig");
  SymFnSpec spec{[epsilon](double l) { return l > epsilon ? l : epsilon; },
                 [epsilon](double l) { return l > epsilon ? 1.0 : 0.0; }, "reeig"};
  return sym_matrix_fn(x, spec);
}

Tensor logeig(const Tensor& x) {
  SymFnSpec spec{[](double l) {
                   if (l <= 0.0) throw NumericError("logeig: non-positive eigenvalue");
                   return std::log(l);
                 },
                 [](double l) { return 1.0 / l; }, "logeig"};
  return sym_matrix_fn(x, spec);
}

Tensor expeig(const Tensor& x) {
  SymFnSpec spec{[](double l) { return std::exp(l); }, [](double l) { return std::exp(l); },
                 "expeig"};
  return sym_matrix_fn(x, spec);
}

Tensor upper_triangle_vec(const Tensor& x, bool isometric) {
  const auto [batch, d] = square_batch_dims(x, "upper_triangle_vec");
  const int64_t len = d * (d + 1) / 2;
  Shape out_shape = x.rank() == 2 ? Shape{len} : Shape{batch, len};
  Tensor out = make_result(std::move(out_shape), {&x});
  auto xv = x.values();
  auto ov = out.values();
  const double off_scale = isometric ? std::sqrt(2.0) : 1.0;

  for (int64_t bidx = 0; bidx < batch; ++bidx) {
    const double* xb = xv.data() + bidx * d * d;
    double* ob = ov.data() + bidx * len;
    int64_t k = 0;
    for (int64_t i = 0; i < d; ++i) {
      for (int64_t j = i; j < d; ++j) {
        ob[k++] = (i == j ? 1.0 : off_scale) * xb[i * d + j];
      }
    }
  }

  if (out.requires_grad()) {
    auto xi = x.impl();
    auto oi = out.impl();
    Tape::get().record([xi, oi, batch, d, len, off_scale] {
      if (!xi->requires_grad) return;
      for (int64_t bidx = 0; bidx < batch; ++bidx) {
        const double* g = oi->grad.data() + bidx * len;
        double* gx = xi->grad.data() + bidx * d * d;
        int64_t k = 0;
        for (int64_t i = 0; i < d; ++i) {
          for (int64_t j = i; j < d; ++j) {
            gx[i * d + j] += (i == j ? 1.0 : off_scale) * g[k++];
          }
        }
      }
    });
  }
  return out;
}

Tensor bire_block(const Tensor& x, const Tensor& weight, double epsilon) {
  const auto [batch, d] = square_batch_dims(x, "bire_block");
  (void)batch;
  if (d % 2 != 0) {
    throw ShapeError("bire_block: dimension must be even, got " + std::to_string(d));
  }
  if (weight.rank() != 2 || weight.dim(0) != d || weight.dim(1) != d / 2) {
    throw ShapeError("bire_block: weight must be [" + std::to_string(d) + "," +
                     std::to_string(d / 2) + "], got " + shape_str(weight.shape()));
  }
  return reeig(bimap(x, weight), epsilon);
}

}  // namespace spda::ops

namespace spda {

BiReBlock::BiReBlock(int dim, double eps, uint64_t seed)
    : input_dim(dim), output_dim(dim / 2), epsilon(eps) {
  if (dim % 2 != 0) throw ShapeError("BiReBlock: dimension must be even");
  Rng rng(seed);
  Tensor gauss = Tensor::normal({dim, dim / 2}, rng, 0.0, 1.0);
  std::vector<double> q = linalg::qr_orthonormalize(gauss.values(), dim, dim / 2);
  weight = Tensor::from_vector({dim, dim / 2}, std::move(q), /*requires_grad=*/true);
}

double BiReBlock::orthonormality_residual() const {
  return linalg::orthonormality_residual(weight.values(), input_dim, output_dim);
}

double spd_min_eigenvalue(const Tensor& x) {
  int64_t batch = 1, d = 0;
  if (x.rank() == 2 && x.dim(0) == x.dim(1)) {
    d = x.dim(0);
  } else if (x.rank() == 3 && x.dim(1) == x.dim(2)) {
    batch = x.dim(0);
    d = x.dim(1);
  } else {
    throw ShapeError("spd_min_eigenvalue: expected [d,d] or [B,d,d]");
  }
  auto xv = x.values();
  double lo = std::numeric_limits<double>::infinity();
  for (int64_t b = 0; b < batch; ++b) {
    lo = std::min(lo, linalg::min_eigenvalue(
                          std::span<const double>(xv.data() + b * d * d, static_cast<size_t>(d * d)),
                          static_cast<int>(d)));
  }
  return lo;
}

bool is_spd(const Tensor& x, double* lambda_min) {
  const double lo = spd_min_eigenvalue(x);
  if (lambda_min) *lambda_min = lo;
  return lo > 0.0;
}

}  // namespace spda
