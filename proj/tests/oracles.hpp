// Brute-force reference implementations used as independent oracles in the
// test suites. Everything here recomputes results from first principles with
// plain loops and never calls into the op backward paths it checks.
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "spda/tensor.hpp"

namespace oracles {

// Direct 7-loop convolution, stride 1, same padding.
inline spda::Tensor conv3d_ref(const spda::Tensor& x, const spda::Tensor& k,
                               const spda::Tensor& bias) {
  const int64_t b = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3), d = x.dim(4);
  const int64_t cout = k.dim(0), ks = k.dim(2), pad = (ks - 1) / 2;
  spda::Tensor out = spda::Tensor::zeros({b, cout, h, w, d});
  for (int64_t ib = 0; ib < b; ++ib)
    for (int64_t co = 0; co < cout; ++co)
      for (int64_t z = 0; z < h; ++z)
        for (int64_t y = 0; y < w; ++y)
          for (int64_t xx = 0; xx < d; ++xx) {
            double acc = bias.at({co});
            for (int64_t ci = 0; ci < cin; ++ci)
              for (int64_t kz = 0; kz < ks; ++kz)
                for (int64_t ky = 0; ky < ks; ++ky)
                  for (int64_t kx = 0; kx < ks; ++kx) {
                    const int64_t iz = z + kz - pad, iy = y + ky - pad, ix = xx + kx - pad;
                    if (iz < 0 || iz >= h || iy < 0 || iy >= w || ix < 0 || ix >= d) continue;
                    acc += x.at({ib, ci, iz, iy, ix}) * k.at({co, ci, kz, ky, kx});
                  }
            out.at({ib, co, z, y, xx}) = acc;
          }
  return out;
}

inline spda::Tensor maxpool3d_ref(const spda::Tensor& x) {
  const int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3), d = x.dim(4);
  spda::Tensor out = spda::Tensor::zeros({b, c, h / 2, w / 2, d / 2});
  for (int64_t ib = 0; ib < b; ++ib)
    for (int64_t ic = 0; ic < c; ++ic)
      for (int64_t z = 0; z < h / 2; ++z)
        for (int64_t y = 0; y < w / 2; ++y)
          for (int64_t xx = 0; xx < d / 2; ++xx) {
            double best = -1e300;
            for (int64_t dz = 0; dz < 2; ++dz)
              for (int64_t dy = 0; dy < 2; ++dy)
                for (int64_t dx = 0; dx < 2; ++dx)
                  best = std::max(best, x.at({ib, ic, 2 * z + dz, 2 * y + dy, 2 * xx + dx}));
            out.at({ib, ic, z, y, xx}) = best;
          }
  return out;
}

inline spda::Tensor linear_ref(const spda::Tensor& x, const spda::Tensor& w,
                               const spda::Tensor& b) {
  const int64_t bs = x.dim(0), n = x.dim(1), m = w.dim(0);
  spda::Tensor out = spda::Tensor::zeros({bs, m});
  for (int64_t i = 0; i < bs; ++i)
    for (int64_t j = 0; j < m; ++j) {
      double s = b.at({j});
      for (int64_t k = 0; k < n; ++k) s += x.at({i, k}) * w.at({j, k});
      out.at({i, j}) = s;
    }
  return out;
}

// Gram oracle: sum_n R[i,n] R[j,n] / N (no jitter).
inline std::vector<double> gram_ref(const spda::Tensor& f) {
  const int64_t c = f.dim(0);
  const int64_t n = f.numel() / c;
  auto fv = f.values();
  std::vector<double> g(static_cast<size_t>(c * c), 0.0);
  for (int64_t i = 0; i < c; ++i)
    for (int64_t j = 0; j < c; ++j) {
      double s = 0.0;
      for (int64_t k = 0; k < n; ++k) {
        s += fv[static_cast<size_t>(i * n + k)] * fv[static_cast<size_t>(j * n + k)];
      }
      g[static_cast<size_t>(i * c + j)] = s / static_cast<double>(n);
    }
  return g;
}

inline double frobenius_inner(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// All-pairs AUC: P(score+ > score-) + ties/2.
inline double auc_pairs_ref(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0.0;
  int64_t pairs = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (!labels[i]) continue;
    for (size_t j = 0; j < scores.size(); ++j) {
      if (labels[j]) continue;
      ++pairs;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

// AP from an ordered TP/FP flag list via the precision envelope, computed
// point by point from the definition.
inline double ap_ref(const std::vector<int>& tp_flags, int64_t total_gt) {
  if (total_gt == 0) return 0.0;
  std::vector<double> prec, rec;
  int64_t tp = 0, fp = 0;
  for (int f : tp_flags) {
    (f ? tp : fp) += 1;
    prec.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    rec.push_back(static_cast<double>(tp) / static_cast<double>(total_gt));
  }
  double ap = 0.0, prev_r = 0.0;
  for (size_t i = 0; i < prec.size(); ++i) {
    if (rec[i] <= prev_r) continue;
    double env = 0.0;
    for (size_t j = i; j < prec.size(); ++j) env = std::max(env, prec[j]);
    ap += (rec[i] - prev_r) * env;
    prev_r = rec[i];
  }
  return ap;
}

// Nearest-rank percentile: value at index ceil(p/100 * n), 1-based.
inline double percentile_ref(std::vector<double> v, double pct) {
  std::sort(v.begin(), v.end());
  const int64_t rank = std::max<int64_t>(
      1, std::min<int64_t>(static_cast<int64_t>(v.size()),
                           static_cast<int64_t>(std::ceil(pct / 100.0 * v.size()))));
  return v[static_cast<size_t>(rank - 1)];
}

}  // namespace oracles
