#include <cmath>

#include "spda/ops.hpp"

namespace spda::ops {

using detail::make_result;

Tensor conv3d(const Tensor& input, const Tensor& kernel, const Tensor& bias) {
  if (input.rank() != 5 || kernel.rank() != 5 || bias.rank() != 1) {
    throw ShapeError("conv3d: expected input [B,Cin,H,W,D], kernel [Cout,Cin,k,k,k], bias [Cout]");
  }
  const int64_t b = input.dim(0), cin = input.dim(1);
  const int64_t h = input.dim(2), w = input.dim(3), d = input.dim(4);
  const int64_t cout = kernel.dim(0), k = kernel.dim(2);
  if (kernel.dim(1) != cin) {
    throw ShapeError("conv3d: input channels " + std::to_string(cin) + " vs kernel Cin " +
                     std::to_string(kernel.dim(1)));
  }
  if (kernel.dim(3) != k || kernel.dim(4) != k || k % 2 == 0) {
    throw ShapeError("conv3d: kernel must be cubic with odd size, got " + shape_str(kernel.shape()));
  }
  if (bias.dim(0) != cout) throw ShapeError("conv3d: bias size mismatch");
  const int64_t pad = (k - 1) / 2;

  Tensor out = make_result({b, cout, h, w, d}, {&input, &kernel, &bias});
  auto xv = input.values();
  auto kv = kernel.values();
  auto bv = bias.values();
  auto ov = out.values();

  const int64_t vol = h * w * d;
  // Seed outputs with the channel bias, then accumulate one shifted slab per
  // (co, ci, kz, ky, kx) tap; the inner x-loop is contiguous.
  for (int64_t ib = 0; ib < b; ++ib) {
    for (int64_t co = 0; co < cout; ++co) {
      double* ob = ov.data() + (ib * cout + co) * vol;
      const double bias_v = bv[static_cast<size_t>(co)];
      for (int64_t i = 0; i < vol; ++i) ob[i] = bias_v;
      for (int64_t ci = 0; ci < cin; ++ci) {
        const double* xb = xv.data() + (ib * cin + ci) * vol;
        const double* kb = kv.data() + (co * cin + ci) * k * k * k;
        for (int64_t kz = 0; kz < k; ++kz) {
          const int64_t z0 = std::max<int64_t>(0, pad - kz), z1 = std::min(h, h + pad - kz);
          for (int64_t ky = 0; ky < k; ++ky) {
            const int64_t y0 = std::max<int64_t>(0, pad - ky), y1 = std::min(w, w + pad - ky);
            for (int64_t kx = 0; kx < k; ++kx) {
              const double wgt = kb[(kz * k + ky) * k + kx];
              if (wgt == 0.0) continue;
              const int64_t x0 = std::max<int64_t>(0, pad - kx), x1 = std::min(d, d + pad - kx);
              for (int64_t z = z0; z < z1; ++z) {
                const int64_t iz = z + kz - pad;
                for (int64_t y = y0; y < y1; ++y) {
                  const int64_t iy = y + ky - pad;
                  const double* src = xb + (iz * w + iy) * d + (x0 + kx - pad);
                  double* dst = ob + (z * w + y) * d + x0;
                  for (int64_t x = 0; x < x1 - x0; ++x) dst[x] += wgt * src[x];
                }
              }
            }
          }
        }
      }
    }
  }

  if (out.requires_grad()) {
    auto xi = input.impl();
    auto ki = kernel.impl();
    auto bi = bias.impl();
    auto oi = out.impl();
    Tape::get().record([xi, ki, bi, oi, b, cin, cout, h, w, d, k, pad, vol] {
      if (bi->requires_grad) {
        for (int64_t ib = 0; ib < b; ++ib) {
          for (int64_t co = 0; co < cout; ++co) {
            const double* g = oi->grad.data() + (ib * cout + co) * vol;
            double s = 0.0;
            for (int64_t i = 0; i < vol; ++i) s += g[i];
            bi->grad[static_cast<size_t>(co)] += s;
          }
        }
      }
      for (int64_t ib = 0; ib < b; ++ib) {
        for (int64_t co = 0; co < cout; ++co) {
          const double* g = oi->grad.data() + (ib * cout + co) * vol;
          for (int64_t ci = 0; ci < cin; ++ci) {
            const double* xb = xi->data.data() + (ib * cin + ci) * vol;
            double* gx = xi->requires_grad ? xi->grad.data() + (ib * cin + ci) * vol : nullptr;
            const double* kb = ki->data.data() + (co * cin + ci) * k * k * k;
            double* gk = ki->requires_grad ? ki->grad.data() + (co * cin + ci) * k * k * k : nullptr;
            for (int64_t kz = 0; kz < k; ++kz) {
              const int64_t z0 = std::max<int64_t>(0, pad - kz), z1 = std::min(h, h + pad - kz);
              for (int64_t ky = 0; ky < k; ++ky) {
                const int64_t y0 = std::max<int64_t>(0, pad - ky), y1 = std::min(w, w + pad - ky);
                for (int64_t kx = 0; kx < k; ++kx) {
                  const int64_t x0 = std::max<int64_t>(0, pad - kx), x1 = std::min(d, d + pad - kx);
                  const double wgt = kb[(kz * k + ky) * k + kx];
                  double acc = 0.0;
                  for (int64_t z = z0; z < z1; ++z) {
                    const int64_t iz = z + kz - pad;
                    for (int64_t y = y0; y < y1; ++y) {
                      const int64_t iy = y + ky - pad;
                      const double* gr = g + (z * w + y) * d + x0;
                      const double* src = xb + (iz * w + iy) * d + (x0 + kx - pad);
                      if (gk) {
                        for (int64_t x = 0; x < x1 - x0; ++x) acc += gr[x] * src[x];
                      }
                      if (gx) {
                        double* dst = gx + (iz * w + iy) * d + (x0 + kx - pad);
                        for (int64_t x = 0; x < x1 - x0; ++x) dst[x] += wgt * gr[x];
                      }
                    }
                  }
                  if (gk) gk[(kz * k + ky) * k + kx] += acc;
                }
              }
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor maxpool3d(const Tensor& input) {
  if (input.rank() != 5) {
    throw ShapeError("maxpool3d: expected [B,C,H,W,D], got " + shape_str(input.shape()));
  }
  const int64_t b = input.dim(0), c = input.dim(1);
  const int64_t h = input.dim(2), w = input.dim(3), d = input.dim(4);
  if (h % 2 || w % 2 || d % 2) {
    throw ShapeError("maxpool3d: spatial dims must be divisible by 2, got " +
                     shape_str(input.shape()));
  }
  const int64_t oh = h / 2, ow = w / 2, od = d / 2;
  Tensor out = make_result({b, c, oh, ow, od}, {&input});
  auto xv = input.values();
  auto ov = out.values();
  std::vector<int64_t> argmax(static_cast<size_t>(out.numel()));

  const int64_t vol = h * w * d;
  const int64_t ovol = oh * ow * od;
  for (int64_t bc = 0; bc < b * c; ++bc) {
    const double* xb = xv.data() + bc * vol;
    double* ob = ov.data() + bc * ovol;
    int64_t* ab = argmax.data() + bc * ovol;
    for (int64_t z = 0; z < oh; ++z) {
      for (int64_t y = 0; y < ow; ++y) {
        for (int64_t x = 0; x < od; ++x) {
          double best = -std::numeric_limits<double>::infinity();
          int64_t best_idx = -1;
          for (int64_t dz = 0; dz < 2; ++dz) {
            for (int64_t dy = 0; dy < 2; ++dy) {
              for (int64_t dx = 0; dx < 2; ++dx) {
                const int64_t idx = ((2 * z + dz) * w + (2 * y + dy)) * d + (2 * x + dx);
                if (xb[idx] > best) {
                  best = xb[idx];
                  best_idx = idx;
                }
              }
            }
          }
          ob[(z * ow + y) * od + x] = best;
          ab[(z * ow + y) * od + x] = bc * vol + best_idx;
        }
      }
    }
  }

  if (out.requires_grad()) {
    auto xi = input.impl();
    auto oi = out.impl();
    Tape::get().record([xi, oi, argmax = std::move(argmax)] {
      if (!xi->requires_grad) return;
      for (size_t i = 0; i < argmax.size(); ++i) {
        xi->grad[static_cast<size_t>(argmax[i])] += oi->grad[i];
      }
    });
  }
  return out;
}

Tensor upsample_nearest3d(const Tensor& input) {
  if (input.rank() != 5) {
    throw ShapeError("upsample_nearest3d: expected [B,C,H,W,D], got " + shape_str(input.shape()));
  }
  const int64_t b = input.dim(0), c = input.dim(1);
  const int64_t h = input.dim(2), w = input.dim(3), d = input.dim(4);
  Tensor out = make_result({b, c, 2 * h, 2 * w, 2 * d}, {&input});
  auto xv = input.values();
  auto ov = out.values();
  const int64_t vol = h * w * d;
  const int64_t ovol = 8 * vol;
  for (int64_t bc = 0; bc < b * c; ++bc) {
    const double* xb = xv.data() + bc * vol;
    double* ob = ov.data() + bc * ovol;
    for (int64_t z = 0; z < 2 * h; ++z) {
      for (int64_t y = 0; y < 2 * w; ++y) {
        for (int64_t x = 0; x < 2 * d; ++x) {
          ob[(z * 2 * w + y) * 2 * d + x] = xb[((z / 2) * w + y / 2) * d + x / 2];
        }
      }
    }
  }
  if (out.requires_grad()) {
    auto xi = input.impl();
    auto oi = out.impl();
    Tape::get().record([xi, oi, b, c, h, w, d, vol, ovol] {
      if (!xi->requires_grad) return;
      for (int64_t bc = 0; bc < b * c; ++bc) {
        const double* gb = oi->grad.data() + bc * ovol;
        double* gx = xi->grad.data() + bc * vol;
        for (int64_t z = 0; z < 2 * h; ++z) {
          for (int64_t y = 0; y < 2 * w; ++y) {
            for (int64_t x = 0; x < 2 * d; ++x) {
              gx[((z / 2) * w + y / 2) * d + x / 2] += gb[(z * 2 * w + y) * 2 * d + x];
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor batchnorm3d(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                   Tensor& running_var, double momentum, double eps, bool train,
                   bool update_running) {
  if (x.rank() != 5) throw ShapeError("batchnorm3d: expected [B,C,H,W,D]");
  const int64_t b = x.dim(0), c = x.dim(1);
  const int64_t vol = x.dim(2) * x.dim(3) * x.dim(4);
  if (gamma.numel() != c || beta.numel() != c || running_mean.numel() != c ||
      running_var.numel() != c) {
    throw ShapeError("batchnorm3d: parameter size mismatch for C=" + std::to_string(c));
  }
  const int64_t m = b * vol;

  Tensor out = detail::make_result(x.shape(), {&x, &gamma, &beta});
  auto xv = x.values();
  auto gv = gamma.values();
  auto bv = beta.values();
  auto ov = out.values();

  std::vector<double> mean(static_cast<size_t>(c), 0.0);
  std::vector<double> inv_std(static_cast<size_t>(c), 0.0);

  if (train) {
    for (int64_t j = 0; j < c; ++j) {
      double s = 0.0;
      for (int64_t i = 0; i < b; ++i) {
        const double* src = xv.data() + (i * c + j) * vol;
        for (int64_t k = 0; k < vol; ++k) s += src[k];
      }
      mean[static_cast<size_t>(j)] = s / static_cast<double>(m);
      double v = 0.0;
      for (int64_t i = 0; i < b; ++i) {
        const double* src = xv.data() + (i * c + j) * vol;
        for (int64_t k = 0; k < vol; ++k) {
          const double t = src[k] - mean[static_cast<size_t>(j)];
          v += t * t;
        }
      }
      const double var = v / static_cast<double>(m);
      inv_std[static_cast<size_t>(j)] = 1.0 / std::sqrt(var + eps);
      if (update_running) {
        const double unbiased = m > 1 ? v / static_cast<double>(m - 1) : var;
        auto rm = running_mean.values();
        auto rv = running_var.values();
        rm[static_cast<size_t>(j)] =
            (1.0 - momentum) * rm[static_cast<size_t>(j)] + momentum * mean[static_cast<size_t>(j)];
        rv[static_cast<size_t>(j)] = (1.0 - momentum) * rv[static_cast<size_t>(j)] + momentum * unbiased;
      }
    }
  } else {
    auto rm = running_mean.values();
    auto rv = running_var.values();
    for (int64_t j = 0; j < c; ++j) {
      mean[static_cast<size_t>(j)] = rm[static_cast<size_t>(j)];
      inv_std[static_cast<size_t>(j)] = 1.0 / std::sqrt(rv[static_cast<size_t>(j)] + eps);
    }
  }

  for (int64_t i = 0; i < b; ++i) {
    for (int64_t j = 0; j < c; ++j) {
      const double mu = mean[static_cast<size_t>(j)];
      const double is = inv_std[static_cast<size_t>(j)];
      const double g = gv[static_cast<size_t>(j)];
      const double bt = bv[static_cast<size_t>(j)];
      const double* src = xv.data() + (i * c + j) * vol;
      double* dst = ov.data() + (i * c + j) * vol;
      for (int64_t k = 0; k < vol; ++k) dst[k] = g * (src[k] - mu) * is + bt;
    }
  }

  if (out.requires_grad()) {
    auto xi = x.impl();
    auto gi = gamma.impl();
    auto bi = beta.impl();
    auto oi = out.impl();
    Tape::get().record([xi, gi, bi, oi, mean = std::move(mean), inv_std = std::move(inv_std), b, c,
                        vol, m, train] {
      for (int64_t j = 0; j < c; ++j) {
        const double mu = mean[static_cast<size_t>(j)];
        const double is = inv_std[static_cast<size_t>(j)];
        const double g = gi->data[static_cast<size_t>(j)];
        double sum_g = 0.0, sum_gx = 0.0;
        for (int64_t i = 0; i < b; ++i) {
          const double* go = oi->grad.data() + (i * c + j) * vol;
          const double* src = xi->data.data() + (i * c + j) * vol;
          for (int64_t k = 0; k < vol; ++k) {
            sum_g += go[k];
            sum_gx += go[k] * (src[k] - mu) * is;
          }
        }
        if (gi->requires_grad) gi->grad[static_cast<size_t>(j)] += sum_gx;
        if (bi->requires_grad) bi->grad[static_cast<size_t>(j)] += sum_g;
        if (xi->requires_grad) {
          const double inv_m = 1.0 / static_cast<double>(m);
          for (int64_t i = 0; i < b; ++i) {
            const double* go = oi->grad.data() + (i * c + j) * vol;
            const double* src = xi->data.data() + (i * c + j) * vol;
            double* gx = xi->grad.data() + (i * c + j) * vol;
            for (int64_t k = 0; k < vol; ++k) {
              if (train) {
                const double xhat = (src[k] - mu) * is;
                gx[k] += g * is * (go[k] - sum_g * inv_m - xhat * sum_gx * inv_m);
              } else {
                gx[k] += g * is * go[k];
              }
            }
          }
        }
      }
    });
  }
  return out;
}

}  // namespace spda::ops
