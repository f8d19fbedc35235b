#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "spda/linalg.hpp"
#include "spda/optim.hpp"

using namespace spda;
using optim::RmspropState;

TEST_CASE("rmsprop with zero gradient leaves the parameter and decays the state") {
  std::vector<double> p = {1.0, -2.0};
  std::vector<double> g = {0.0, 0.0};
  RmspropState st(2, 1e-2);
  st.square_avg = {4.0, 9.0};
  optim::rmsprop_step(p, g, st);
  CHECK(p[0] == 1.0);
  CHECK(p[1] == -2.0);
  CHECK(st.square_avg[0] == doctest::Approx(0.99 * 4.0));
  CHECK(st.square_avg[1] == doctest::Approx(0.99 * 9.0));
}

TEST_CASE("rmsprop single step from a zero state") {
  const double lr = 1e-3, g = 0.7;
  std::vector<double> p = {0.0};
  std::vector<double> grad = {g};
  RmspropState st(1, lr);
  optim::rmsprop_step(p, grad, st);
  const double expect = -lr * g / (std::sqrt((1.0 - 0.99) * g * g) + 1e-8);
  CHECK(p[0] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("rmsprop step size converges to lr*sign(g) under a constant gradient") {
  const double lr = 1e-3, g = 0.5;
  std::vector<double> p = {0.0};
  std::vector<double> grad = {g};
  RmspropState st(1, lr);
  double prev = 0.0, step = 0.0;
  for (int i = 0; i < 5000; ++i) {
    prev = p[0];
    optim::rmsprop_step(p, grad, st);
    step = prev - p[0];
  }
  CHECK(std::abs(step - lr) / lr <= 0.01);
}

TEST_CASE("rmsprop asymptotic step magnitude is gradient-scale invariant") {
  auto run = [](double g) {
    std::vector<double> p = {0.0};
    std::vector<double> grad = {g};
    RmspropState st(1, 1e-3);
    double prev = 0.0;
    for (int i = 0; i < 5000; ++i) {
      prev = p[0];
      optim::rmsprop_step(p, grad, st);
    }
    return prev - p[0];
  };
  const double s1 = run(0.3), s2 = run(0.6);
  CHECK(std::abs(s1 - s2) / std::abs(s1) <= 0.01);
}

TEST_CASE("rmsprop rejects non-finite gradients") {
  std::vector<double> p = {0.0};
  std::vector<double> grad = {std::nan("")};
  RmspropState st(1, 1e-3);
  CHECK_THROWS_AS(optim::rmsprop_step(p, grad, st), NumericError);
}

namespace {

std::vector<double> random_orthonormal(int n, int p, Rng& rng) {
  std::vector<double> g(static_cast<size_t>(n) * p);
  for (double& v : g) v = rng.normal();
  return linalg::qr_orthonormalize(g, n, p);
}

}  // namespace

TEST_CASE("stiefel step with zero gradient is bitwise unchanged") {
  Rng rng(61);
  std::vector<double> a = random_orthonormal(8, 3, rng);
  std::vector<double> before = a;
  std::vector<double> g(a.size(), 0.0);
  optim::stiefel_step(a, 8, 3, g, 0.1);
  CHECK(a == before);
}

TEST_CASE("a normal-space gradient produces no movement") {
  Rng rng(62);
  const int n = 8, p = 3;
  std::vector<double> a = random_orthonormal(n, p, rng);
  std::vector<double> s(static_cast<size_t>(p) * p);
  for (int i = 0; i < p; ++i)
    for (int j = i; j < p; ++j) {
      const double v = rng.uniform(-1.0, 1.0);
      s[static_cast<size_t>(i) * p + j] = v;
      s[static_cast<size_t>(j) * p + i] = v;
    }
  // G = A S with S symmetric lies in the normal space.
  std::vector<double> g(a.size(), 0.0);
  for (int r = 0; r < n; ++r)
    for (int j = 0; j < p; ++j) {
      double acc = 0.0;
      for (int k = 0; k < p; ++k)
        acc += a[static_cast<size_t>(r) * p + k] * s[static_cast<size_t>(k) * p + j];
      g[static_cast<size_t>(r) * p + j] = acc;
    }
  std::vector<double> before = a;
  optim::stiefel_step(a, n, p, g, 0.1);
  for (size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - before[i]) <= 1e-12);
}

TEST_CASE("stiefel step retracts to machine-precision orthonormality and descends") {
  Rng rng(63);
  const int n = 8, p = 3;
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> a = random_orthonormal(n, p, rng);
    std::vector<double> g(a.size());
    for (double& v : g) v = rng.normal();
    double before = 0.0;
    for (size_t i = 0; i < a.size(); ++i) before += g[i] * a[i];
    std::vector<double> a2 = a;
    optim::stiefel_step(a2, n, p, g, 1e-3);
    CHECK(linalg::orthonormality_residual(a2, n, p) <= 1e-12);
    double after = 0.0;
    for (size_t i = 0; i < a.size(); ++i) after += g[i] * a2[i];
    CHECK(after < before);  // <G, A> decreases for small steps
  }
}

TEST_CASE("a thousand random steps cause no orthogonality drift") {
  Rng rng(64);
  const int n = 8, p = 3;
  std::vector<double> a = random_orthonormal(n, p, rng);
  std::vector<double> g(a.size());
  for (int step = 0; step < 1000; ++step) {
    for (double& v : g) v = rng.normal();
    optim::stiefel_step(a, n, p, g, 0.1);
  }
  CHECK(linalg::orthonormality_residual(a, n, p) <= 1e-6);
}

TEST_CASE("stiefel descent solves the orthogonal Procrustes toy problem") {
  // min ||A - B||_F^2 with B orthonormal: <A,B> -> p within 1e-4 in <= 500
  // steps at lr 0.1.
  Rng rng(65);
  const int n = 8, p = 3;
  std::vector<double> b = random_orthonormal(n, p, rng);
  std::vector<double> a = random_orthonormal(n, p, rng);
  std::vector<double> g(a.size());
  double inner = 0.0;
  int steps = 0;
  for (; steps < 500; ++steps) {
    for (size_t i = 0; i < a.size(); ++i) g[i] = 2.0 * (a[i] - b[i]);
    optim::stiefel_step(a, n, p, g, 0.1);
    inner = 0.0;
    for (size_t i = 0; i < a.size(); ++i) inner += a[i] * b[i];
    if (std::abs(inner - p) <= 1e-4) break;
  }
  CHECK(std::abs(inner - p) <= 1e-4);
  CHECK(steps < 500);
}

TEST_CASE("tensor overloads drive the same update rules") {
  Rng rng(66);
  Tensor param = Tensor::from_vector({2, 2}, random_orthonormal(2, 2, rng), true);
  for (double& v : param.grad()) v = 0.5;
  optim::stiefel_step(param, 0.1);
  CHECK(linalg::orthonormality_residual(param.values(), 2, 2) <= 1e-12);

  Tensor eu = Tensor::from_vector({3}, {1.0, 2.0, 3.0}, true);
  auto ge = eu.grad();
  ge[0] = 1.0;
  ge[1] = -1.0;
  ge[2] = 0.0;
  RmspropState st(3, 1e-2);
  optim::rmsprop_step(eu, st);
  CHECK(eu.at({0}) < 1.0);
  CHECK(eu.at({1}) > 2.0);
  CHECK(eu.at({2}) == 3.0);
}
