#include "spda/optim.hpp"

#include <cmath>

#include "spda/linalg.hpp"

namespace spda::optim {

void rmsprop_step(std::span<double> param, std::span<const double> grad, RmspropState& state) {
  if (param.size() != grad.size() || param.size() != state.square_avg.size()) {
    throw ShapeError("rmsprop_step: size mismatch");
  }
  for (size_t i = 0; i < param.size(); ++i) {
    if (!std::isfinite(grad[i])) throw NumericError("rmsprop_step: non-finite gradient");
    state.square_avg[i] = state.alpha * state.square_avg[i] + (1.0 - state.alpha) * grad[i] * grad[i];
    param[i] -= state.lr * grad[i] / (std::sqrt(state.square_avg[i]) + state.eps);
  }
}

void rmsprop_step(Tensor& param, RmspropState& state) {
  rmsprop_step(param.values(), param.grad(), state);
}

void stiefel_step(std::span<double> param, int n, int p, std::span<const double> grad, double lr) {
  if (static_cast<int>(param.size()) != n * p || param.size() != grad.size()) {
    throw ShapeError("stiefel_step: size mismatch");
  }
  bool all_zero = true;
  for (double g : grad) {
    if (!std::isfinite(g)) throw NumericError("stiefel_step: non-finite gradient");
    if (g != 0.0) all_zero = false;
  }
  if (all_zero || lr == 0.0) return;

  // S = sym(A^T G)
  std::vector<double> atg(static_cast<size_t>(p) * p, 0.0);
  for (int i = 0; i < p; ++i) {
    for (int j = 0; j < p; ++j) {
      double s = 0.0;
      for (int r = 0; r < n; ++r) {
        s += param[static_cast<size_t>(r) * p + i] * grad[static_cast<size_t>(r) * p + j];
      }
      atg[static_cast<size_t>(i) * p + j] = s;
    }
  }
  std::vector<double> sym(static_cast<size_t>(p) * p);
  for (int i = 0; i < p; ++i) {
    for (int j = 0; j < p; ++j) {
      sym[static_cast<size_t>(i) * p + j] =
          0.5 * (atg[static_cast<size_t>(i) * p + j] + atg[static_cast<size_t>(j) * p + i]);
    }
  }

  // Candidate A - lr * (G - A S), then retract.
  std::vector<double> candidate(param.begin(), param.end());
  for (int r = 0; r < n; ++r) {
    for (int j = 0; j < p; ++j) {
      double as = 0.0;
      for (int k = 0; k < p; ++k) {
        as += param[static_cast<size_t>(r) * p + k] * sym[static_cast<size_t>(k) * p + j];
      }
      const double tangent = grad[static_cast<size_t>(r) * p + j] - as;
      candidate[static_cast<size_t>(r) * p + j] -= lr * tangent;
    }
  }

  std::vector<double> q;
  try {
    q = linalg::qr_orthonormalize(candidate, n, p);
  } catch (const NumericError&) {
    throw NumericError("stiefel_step: rank collapse during retraction (step too large)");
  }
  for (size_t i = 0; i < param.size(); ++i) param[i] = q[i];
}

void stiefel_step(Tensor& param, double lr) {
  if (param.rank() != 2) throw ShapeError("stiefel_step: parameter must be a matrix");
  stiefel_step(param.values(), static_cast<int>(param.dim(0)), static_cast<int>(param.dim(1)),
               param.grad(), lr);
}

}  // namespace spda::optim
