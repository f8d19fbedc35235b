#include <cmath>

#include "spda/ops.hpp"

namespace spda::ops {

namespace detail {

bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

Tensor make_result(Shape shape, std::initializer_list<const Tensor*> inputs) {
  Tensor out = Tensor::zeros(std::move(shape));
  if (Tape::get().recording() && any_requires_grad(inputs)) {
    out.impl()->leaf = false;
    out.impl()->requires_grad = true;
    out.impl()->grad.assign(out.impl()->data.size(), 0.0);
  } else {
    out.impl()->leaf = false;
  }
  return out;
}

}  // namespace detail

namespace {

using detail::make_result;

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

}  // namespace

Tensor relu(const Tensor& x) {
  Tensor out = make_result(x.shape(), {&x});
  auto xv = x.values();
  auto ov = out.values();
  for (size_t i = 0; i < xv.size(); ++i) ov[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  if (out.requires_grad()) {
    auto xi = x.impl();
    auto oi = out.impl();
    Tape::get().record([xi, oi] {
      if (!xi->requires_grad) return;
      for (size_t i = 0; i < xi->data.size(); ++i) {
        if (xi->data[i] > 0.0) xi->grad[i] += oi->grad[i];
      }
    });
  }
  return out;
}

Tensor sigmoid(const Tensor& x) {
  Tensor out = make_result(x.shape(), {&x});
  auto xv = x.values();
  auto ov = out.values();
  for (size_t i = 0; i < xv.size(); ++i) ov[i] = 1.0 / (1.0 + std::exp(-xv[i]));
  if (out.requires_grad()) {
    auto xi = x.impl();
    auto oi = out.impl();
    Tape::get().record([xi, oi] {
      if (!xi->requires_grad) return;
      for (size_t i = 0; i < xi->data.size(); ++i) {
        const double s = oi->data[i];
        xi->grad[i] += oi->grad[i] * s * (1.0 - s);
      }
    });
  }
  return out;
}

Tensor log(const Tensor& x) {
  Tensor out = make_result(x.shape(), {&x});
  auto xv = x.values();
  auto ov = out.values();
  for (size_t i = 0; i < xv.size(); ++i) {
    if (xv[i] <= 0.0) throw NumericError("log: non-positive input");
    ov[i] = std::log(xv[i]);
  }
  if (out.requires_grad()) {
    auto xi = x.impl();
    auto oi = out.impl();
    Tape::get().record([xi, oi] {
      if (!xi->requires_grad) return;
      for (size_t i = 0; i < xi->data.size(); ++i) xi->grad[i] += oi->grad[i] / xi->data[i];
    });
  }
  return out;
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (lo > hi) throw Error("clamp: lo > hi");
  Tensor out = make_result(x.shape(), {&x});
  auto xv = x.values();
  auto ov = out.values();
  for (size_t i = 0; i < xv.size(); ++i) ov[i] = std::min(hi, std::max(lo, xv[i]));
  if (out.requires_grad()) {
    auto xi = x.impl();
    auto oi = out.impl();
    Tape::get().record([xi, oi, lo, hi] {
      if (!xi->requires_grad) return;
      for (size_t i = 0; i < xi->data.size(); ++i) {
        if (xi->data[i] > lo && xi->data[i] < hi) xi->grad[i] += oi->grad[i];
      }
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = make_result(a.shape(), {&a, &b});
  auto av = a.values();
  auto bv = b.values();
  auto ov = out.values();
  for (size_t i = 0; i < av.size(); ++i) ov[i] = av[i] + bv[i];
  if (out.requires_grad()) {
    auto ai = a.impl();
    auto bi = b.impl();
    auto oi = out.impl();
    Tape::get().record([ai, bi, oi] {
      if (ai->requires_grad) {
        for (size_t i = 0; i < ai->data.size(); ++i) ai->grad[i] += oi->grad[i];
      }
      if (bi->requires_grad) {
        for (size_t i = 0; i < bi->data.size(); ++i) bi->grad[i] += oi->grad[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out = make_result(a.shape(), {&a, &b});
  auto av = a.values();
  auto bv = b.values();
  auto ov = out.values();
  for (size_t i = 0; i < av.size(); ++i) ov[i] = av[i] - bv[i];
  if (out.requires_grad()) {
    auto ai = a.impl();
    auto bi = b.impl();
    auto oi = out.impl();
    Tape::get().record([ai, bi, oi] {
      if (ai->requires_grad) {
        for (size_t i = 0; i < ai->data.size(); ++i) ai->grad[i] += oi->grad[i];
      }
      if (bi->requires_grad) {
        for (size_t i = 0; i < bi->data.size(); ++i) bi->grad[i] -= oi->grad[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out = make_result(a.shape(), {&a, &b});
  auto av = a.values();
  auto bv = b.values();
  auto ov = out.values();
  for (size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * bv[i];
  if (out.requires_grad()) {
    auto ai = a.impl();
    auto bi = b.impl();
    auto oi = out.impl();
    Tape::get().record([ai, bi, oi] {
      if (ai->requires_grad) {
        for (size_t i = 0; i < ai->data.size(); ++i) ai->grad[i] += oi->grad[i] * bi->data[i];
      }
      if (bi->requires_grad) {
        for (size_t i = 0; i < bi->data.size(); ++i) bi->grad[i] += oi->grad[i] * ai->data[i];
      }
    });
  }
  return out;
}

Tensor div(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "div");
  Tensor out = make_result(a.shape(), {&a, &b});
  auto av = a.values();
  auto bv = b.values();
  auto ov = out.values();
  for (size_t i = 0; i < av.size(); ++i) {
    if (bv[i] == 0.0) throw NumericError("div: zero denominator");
    ov[i] = av[i] / bv[i];
  }
  if (out.requires_grad()) {
    auto ai = a.impl();
    auto bi = b.impl();
    auto oi = out.impl();
    Tape::get().record([ai, bi, oi] {
      if (ai->requires_grad) {
        for (size_t i = 0; i < ai->data.size(); ++i) ai->grad[i] += oi->grad[i] / bi->data[i];
      }
      if (bi->requires_grad) {
        for (size_t i = 0; i < bi->data.size(); ++i) {
          bi->grad[i] -= oi->grad[i] * ai->data[i] / (bi->data[i] * bi->data[i]);
        }
      }
    });
  }
  return out;
}

Tensor add_scalar(const Tensor& x, double c) {
  Tensor out = make_result(x.shape(), {&x});
  auto xv = x.values();
  auto ov = out.values();
  for (size_t i = 0; i < xv.size(); ++i) ov[i] = xv[i] + c;
  if (out.requires_grad()) {
    auto xi = x.impl();
    auto oi = out.impl();
    Tape::get().record([xi, oi] {
      if (!xi->requires_grad) return;
      for (size_t i = 0; i < xi->data.size(); ++i) xi->grad[i] += oi->grad[i];
    });
  }
  return out;
}

Tensor mul_scalar(const Tensor& x, double c) {
  Tensor out = make_result(x.shape(), {&x});
  auto xv = x.values();
  auto ov = out.values();
  for (size_t i = 0; i < xv.size(); ++i) ov[i] = xv[i] * c;
  if (out.requires_grad()) {
    auto xi = x.impl();
    auto oi = out.impl();
    Tape::get().record([xi, oi, c] {
      if (!xi->requires_grad) return;
      for (size_t i = 0; i < xi->data.size(); ++i) xi->grad[i] += oi->grad[i] * c;
    });
  }
  return out;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis < 0 || axis >= static_cast<int>(first.size())) {
    throw ShapeError("concat: axis out of range");
  }
  Shape out_shape = first;
  int64_t concat_dim = 0;
  for (const Tensor& t : parts) {
    const Shape& s = t.shape();
    if (s.size() != first.size()) throw ShapeError("concat: rank mismatch");
    for (size_t i = 0; i < s.size(); ++i) {
      if (static_cast<int>(i) != axis && s[i] != first[i]) {
        throw ShapeError("concat: shape mismatch " + shape_str(s) + " vs " + shape_str(first));
      }
    }
    concat_dim += s[static_cast<size_t>(axis)];
  }
  out_shape[static_cast<size_t>(axis)] = concat_dim;

  std::vector<const Tensor*> ptrs;
  bool rg = false;
  for (const Tensor& t : parts) rg = rg || t.requires_grad();
  Tensor out = Tensor::zeros(out_shape);
  out.impl()->leaf = false;
  if (Tape::get().recording() && rg) {
    out.impl()->requires_grad = true;
    out.impl()->grad.assign(out.impl()->data.size(), 0.0);
  }

  int64_t outer = 1;
  for (int i = 0; i < axis; ++i) outer *= first[static_cast<size_t>(i)];
  int64_t inner = 1;
  for (size_t i = static_cast<size_t>(axis) + 1; i < first.size(); ++i) inner *= first[i];

  auto ov = out.values();
  int64_t offset = 0;  // in units of (axis slots)
  std::vector<std::pair<std::shared_ptr<TensorImpl>, int64_t>> spans;
  for (const Tensor& t : parts) {
    const int64_t a = t.shape()[static_cast<size_t>(axis)];
    auto tv = t.values();
    for (int64_t o = 0; o < outer; ++o) {
      const double* src = tv.data() + o * a * inner;
      double* dst = ov.data() + (o * concat_dim + offset) * inner;
      for (int64_t i = 0; i < a * inner; ++i) dst[i] = src[i];
    }
    spans.emplace_back(t.impl(), offset);
    offset += a;
  }

  if (out.requires_grad()) {
    auto oi = out.impl();
    Tape::get().record([spans, oi, outer, inner, concat_dim, axis] {
      for (const auto& [impl, off] : spans) {
        if (!impl->requires_grad) continue;
        const int64_t a = impl->shape[static_cast<size_t>(axis)];
        for (int64_t o = 0; o < outer; ++o) {
          const double* src = oi->grad.data() + (o * concat_dim + off) * inner;
          double* dst = impl->grad.data() + o * a * inner;
          for (int64_t i = 0; i < a * inner; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Tensor out = make_result(std::move(shape), {&x});
  auto xv = x.values();
  auto ov = out.values();
  for (size_t i = 0; i < xv.size(); ++i) ov[i] = xv[i];
  if (out.requires_grad()) {
    auto xi = x.impl();
    auto oi = out.impl();
    Tape::get().record([xi, oi] {
      if (!xi->requires_grad) return;
      for (size_t i = 0; i < xi->data.size(); ++i) xi->grad[i] += oi->grad[i];
    });
  }
  return out;
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  if (input.rank() != 2 || weight.rank() != 2 || bias.rank() != 1) {
    throw ShapeError("linear: expected input [B,n], weight [m,n], bias [m]");
  }
  const int64_t b = input.dim(0), n = input.dim(1);
  const int64_t m = weight.dim(0);
  if (weight.dim(1) != n || bias.dim(0) != m) {
    throw ShapeError("linear: inner dims disagree, input " + shape_str(input.shape()) +
                     " weight " + shape_str(weight.shape()));
  }
  Tensor out = make_result({b, m}, {&input, &weight, &bias});
  auto xv = input.values();
  auto wv = weight.values();
  auto bv = bias.values();
  auto ov = out.values();
  for (int64_t i = 0; i < b; ++i) {
    for (int64_t j = 0; j < m; ++j) {
      double s = bv[static_cast<size_t>(j)];
      const double* xr = xv.data() + i * n;
      const double* wr = wv.data() + j * n;
      for (int64_t k = 0; k < n; ++k) s += xr[k] * wr[k];
      ov[static_cast<size_t>(i * m + j)] = s;
    }
  }
  if (out.requires_grad()) {
    auto xi = input.impl();
    auto wi = weight.impl();
    auto bi = bias.impl();
    auto oi = out.impl();
    Tape::get().record([xi, wi, bi, oi, b, n, m] {
      for (int64_t i = 0; i < b; ++i) {
        const double* g = oi->grad.data() + i * m;
        if (xi->requires_grad) {
          double* gx = xi->grad.data() + i * n;
          for (int64_t j = 0; j < m; ++j) {
            const double* wr = wi->data.data() + j * n;
            for (int64_t k = 0; k < n; ++k) gx[k] += g[j] * wr[k];
          }
        }
        if (wi->requires_grad) {
          const double* xr = xi->data.data() + i * n;
          for (int64_t j = 0; j < m; ++j) {
            double* gw = wi->grad.data() + j * n;
            for (int64_t k = 0; k < n; ++k) gw[k] += g[j] * xr[k];
          }
        }
        if (bi->requires_grad) {
          for (int64_t j = 0; j < m; ++j) bi->grad[static_cast<size_t>(j)] += g[j];
        }
      }
    });
  }
  return out;
}

Tensor batch_matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    throw ShapeError("batch_matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  const int64_t bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  Tensor out = make_result({bs, m, n}, {&a, &b});
  auto av = a.values();
  auto bv = b.values();
  auto ov = out.values();
  for (int64_t t = 0; t < bs; ++t) {
    const double* ab = av.data() + t * m * k;
    const double* bb = bv.data() + t * k * n;
    double* ob = ov.data() + t * m * n;
    for (int64_t i = 0; i < m; ++i) {
      for (int64_t l = 0; l < k; ++l) {
        const double x = ab[i * k + l];
        const double* br = bb + l * n;
        double* orow = ob + i * n;
        for (int64_t j = 0; j < n; ++j) orow[j] += x * br[j];
      }
    }
  }
  if (out.requires_grad()) {
    auto ai = a.impl();
    auto bi = b.impl();
    auto oi = out.impl();
    Tape::get().record([ai, bi, oi, bs, m, k, n] {
      for (int64_t t = 0; t < bs; ++t) {
        const double* g = oi->grad.data() + t * m * n;
        if (ai->requires_grad) {
          const double* bb = bi->data.data() + t * k * n;
          double* ga = ai->grad.data() + t * m * k;
          for (int64_t i = 0; i < m; ++i) {
            for (int64_t l = 0; l < k; ++l) {
              double s = 0.0;
              for (int64_t j = 0; j < n; ++j) s += g[i * n + j] * bb[l * n + j];
              ga[i * k + l] += s;
            }
          }
        }
        if (bi->requires_grad) {
          const double* ab = ai->data.data() + t * m * k;
          double* gb = bi->grad.data() + t * k * n;
          for (int64_t l = 0; l < k; ++l) {
            for (int64_t j = 0; j < n; ++j) {
              double s = 0.0;
              for (int64_t i = 0; i < m; ++i) s += ab[i * k + l] * g[i * n + j];
              gb[l * n + j] += s;
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor reduce_sum(const Tensor& x) {
  Tensor out = make_result(Shape{}, {&x});
  auto xv = x.values();
  double s = 0.0;
  for (double v : xv) s += v;
  out.values()[0] = s;
  if (out.requires_grad()) {
    auto xi = x.impl();
    auto oi = out.impl();
    Tape::get().record([xi, oi] {
      if (!xi->requires_grad) return;
      const double g = oi->grad[0];
      for (size_t i = 0; i < xi->data.size(); ++i) xi->grad[i] += g;
    });
  }
  return out;
}

Tensor reduce_mean(const Tensor& x) {
  Tensor out = make_result(Shape{}, {&x});
  auto xv = x.values();
  double s = 0.0;
  for (double v : xv) s += v;
  const double inv_n = 1.0 / static_cast<double>(xv.size());
  out.values()[0] = s * inv_n;
  if (out.requires_grad()) {
    auto xi = x.impl();
    auto oi = out.impl();
    Tape::get().record([xi, oi, inv_n] {
      if (!xi->requires_grad) return;
      const double g = oi->grad[0] * inv_n;
      for (size_t i = 0; i < xi->data.size(); ++i) xi->grad[i] += g;
    });
  }
  return out;
}

Tensor channel_scale(const Tensor& features, const Tensor& coeffs) {
  if (features.rank() < 2 || coeffs.rank() != 2 || features.dim(0) != coeffs.dim(0) ||
      features.dim(1) != coeffs.dim(1)) {
    throw ShapeError("channel_scale: features " + shape_str(features.shape()) + " vs coeffs " +
                     shape_str(coeffs.shape()));
  }
  const int64_t b = features.dim(0), c = features.dim(1);
  int64_t inner = 1;
  for (int i = 2; i < features.rank(); ++i) inner *= features.dim(i);
  Tensor out = make_result(features.shape(), {&features, &coeffs});
  auto fv = features.values();
  auto cv = coeffs.values();
  auto ov = out.values();
  for (int64_t i = 0; i < b; ++i) {
    for (int64_t j = 0; j < c; ++j) {
      const double a = cv[static_cast<size_t>(i * c + j)];
      const double* src = fv.data() + (i * c + j) * inner;
      double* dst = ov.data() + (i * c + j) * inner;
      for (int64_t k = 0; k < inner; ++k) dst[k] = src[k] * a;
    }
  }
  if (out.requires_grad()) {
    auto fi = features.impl();
    auto ci = coeffs.impl();
    auto oi = out.impl();
    Tape::get().record([fi, ci, oi, b, c, inner] {
      for (int64_t i = 0; i < b; ++i) {
        for (int64_t j = 0; j < c; ++j) {
          const double* g = oi->grad.data() + (i * c + j) * inner;
          if (fi->requires_grad) {
            const double a = ci->data[static_cast<size_t>(i * c + j)];
            double* gf = fi->grad.data() + (i * c + j) * inner;
            for (int64_t k = 0; k < inner; ++k) gf[k] += g[k] * a;
          }
          if (ci->requires_grad) {
            const double* f = fi->data.data() + (i * c + j) * inner;
            double s = 0.0;
            for (int64_t k = 0; k < inner; ++k) s += g[k] * f[k];
            ci->grad[static_cast<size_t>(i * c + j)] += s;
          }
        }
      }
    });
  }
  return out;
}

Tensor gap3d(const Tensor& x) {
  if (x.rank() != 5) throw ShapeError("gap3d: expected [B,C,H,W,D], got " + shape_str(x.shape()));
  const int64_t b = x.dim(0), c = x.dim(1);
  const int64_t n = x.dim(2) * x.dim(3) * x.dim(4);
  Tensor out = make_result({b, c}, {&x});
  auto xv = x.values();
  auto ov = out.values();
  const double inv_n = 1.0 / static_cast<double>(n);
  for (int64_t i = 0; i < b * c; ++i) {
    const double* src = xv.data() + i * n;
    double s = 0.0;
    for (int64_t k = 0; k < n; ++k) s += src[k];
    ov[static_cast<size_t>(i)] = s * inv_n;
  }
  if (out.requires_grad()) {
    auto xi = x.impl();
    auto oi = out.impl();
    Tape::get().record([xi, oi, b, c, n, inv_n] {
      if (!xi->requires_grad) return;
      for (int64_t i = 0; i < b * c; ++i) {
        const double g = oi->grad[static_cast<size_t>(i)] * inv_n;
        double* dst = xi->grad.data() + i * n;
        for (int64_t k = 0; k < n; ++k) dst[k] += g;
      }
    });
  }
  return out;
}

}  // namespace spda::ops
