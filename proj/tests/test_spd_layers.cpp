#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "spda/gradcheck.hpp"
#include "spda/spd_layers.hpp"

using namespace spda;

namespace {

double jitter_of(const Tensor& features, int64_t c) {
  // gamma = 1e-5 * max(trace/C, 1e-12) with trace of the raw Gram matrix.
  std::vector<double> g = oracles::gram_ref(features);
  double tr = 0.0;
  for (int64_t i = 0; i < c; ++i) tr += g[static_cast<size_t>(i * c + i)];
  return 1e-5 * std::max(tr / static_cast<double>(c), 1e-12);
}

Tensor random_spd_tensor(int d, Rng& rng, double lo, double hi) {
  Tensor gauss = Tensor::normal({d, d}, rng, 0.0, 1.0);
  std::vector<double> q = linalg::qr_orthonormalize(gauss.values(), d, d);
  std::vector<double> lam(static_cast<size_t>(d));
  for (double& l : lam) l = rng.uniform(lo, hi);
  std::vector<double> x(static_cast<size_t>(d) * d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      double s = 0.0;
      for (int k = 0; k < d; ++k)
        s += q[static_cast<size_t>(i * d + k)] * lam[static_cast<size_t>(k)] *
             q[static_cast<size_t>(j * d + k)];
      x[static_cast<size_t>(i * d + j)] = s;
    }
  return Tensor::from_vector({d, d}, std::move(x));
}

}  // namespace

TEST_CASE("spd_pool on orthogonal rows gives the scaled identity plus jitter") {
  // C=2, N=2, R = [[1,0],[0,1]] -> Gram = I/2 before jitter.
  Tensor f = Tensor::from_vector({2, 2, 1, 1}, {1, 0, 0, 1});
  Tensor x = ops::spd_pool(f);
  const double gamma = jitter_of(f, 2);
  CHECK(x.at({0, 0}) == doctest::Approx(0.5 + gamma).epsilon(1e-15));
  CHECK(x.at({1, 1}) == doctest::Approx(0.5 + gamma).epsilon(1e-15));
  CHECK(x.at({0, 1}) == 0.0);
  CHECK(x.at({1, 0}) == 0.0);
}

TEST_CASE("spd_pool lifts a rank-1 Gram matrix above the jitter floor") {
  Rng rng(41);
  Tensor base = Tensor::uniform({1, 3, 3, 3}, rng, -1.0, 1.0);
  std::vector<double> rep;
  for (int c = 0; c < 4; ++c) {
    rep.insert(rep.end(), base.values().begin(), base.values().end());
  }
  Tensor f = Tensor::from_vector({4, 3, 3, 3}, std::move(rep));  // identical channels
  Tensor x = ops::spd_pool(f);
  const double gamma = jitter_of(f, 4);
  const double lam_min = spd_min_eigenvalue(x);
  CHECK(lam_min >= gamma * (1.0 - 1e-9));
  CHECK(is_spd(x));
}

TEST_CASE("spd_pool matches the brute-force Gram oracle") {
  Rng rng(42);
  Tensor f = Tensor::uniform({4, 3, 3, 3}, rng, -1.0, 1.0);
  Tensor x = ops::spd_pool(f);
  std::vector<double> g = oracles::gram_ref(f);
  const double gamma = jitter_of(f, 4);
  for (int64_t i = 0; i < 4; ++i)
    for (int64_t j = 0; j < 4; ++j) {
      const double expect = g[static_cast<size_t>(i * 4 + j)] + (i == j ? gamma : 0.0);
      CHECK(x.at({i, j}) == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("spd_pool output is exactly symmetric by construction") {
  Rng rng(43);
  Tensor f = Tensor::uniform({5, 2, 3, 2}, rng, -2.0, 2.0);
  Tensor x = ops::spd_pool(f);
  for (int64_t i = 0; i < 5; ++i)
    for (int64_t j = 0; j < 5; ++j) CHECK(x.at({i, j}) == x.at({j, i}));
  Tensor bad = Tensor::from_vector({1, 1, 1, 2}, {1.0, std::nan("")});
  CHECK_THROWS_AS(ops::spd_pool(bad), NumericError);
}

TEST_CASE("bimap with the identity weight is the identity") {
  Rng rng(44);
  Tensor x = random_spd_tensor(4, rng, 0.5, 2.0);
  Tensor w = Tensor::zeros({4, 4});
  for (int64_t i = 0; i < 4; ++i) w.at({i, i}) = 1.0;
  Tensor y = ops::bimap(x, w);
  for (int64_t i = 0; i < 4; ++i)
    for (int64_t j = 0; j < 4; ++j)
      CHECK(y.at({i, j}) == doctest::Approx(x.at({i, j})).epsilon(1e-15));
}

TEST_CASE("bimap with a coordinate selector picks the diagonal entry") {
  Tensor x = Tensor::from_vector({2, 2}, {3, 0, 0, 1});
  Tensor w = Tensor::from_vector({2, 1}, {1, 0});
  Tensor y = ops::bimap(x, w);
  REQUIRE(y.shape() == Shape{1, 1});
  CHECK(y.at({0, 0}) == 3.0);
}

TEST_CASE("bimap with an orthonormal weight preserves positive definiteness") {
  Rng rng(45);
  Tensor x = random_spd_tensor(4, rng, 0.2, 3.0);
  Tensor gauss = Tensor::normal({4, 2}, rng, 0.0, 1.0);
  Tensor w = Tensor::from_vector({4, 2}, linalg::qr_orthonormalize(gauss.values(), 4, 2));
  Tensor y = ops::bimap(x, w);
  CHECK(spd_min_eigenvalue(y) > 0.0);
  CHECK_THROWS_AS(ops::bimap(x, Tensor::zeros({3, 2})), ShapeError);
}

TEST_CASE("reeig clamps small eigenvalues at the threshold") {
  Tensor x = Tensor::from_vector({2, 2}, {2.0, 0.0, 0.0, 1e-6});
  Tensor y = ops::reeig(x, 1e-4);
  CHECK(y.at({0, 0}) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(y.at({1, 1}) == doctest::Approx(1e-4).epsilon(1e-12));
}

TEST_CASE("reeig is a no-op above the threshold") {
  Rng rng(46);
  Tensor x = random_spd_tensor(5, rng, 0.5, 4.0);
  Tensor y = ops::reeig(x, 1e-4);
  for (int64_t i = 0; i < 5; ++i)
    for (int64_t j = 0; j < 5; ++j)
      CHECK(std::abs(y.at({i, j}) - x.at({i, j})) <= 1e-9);
}

TEST_CASE("reeig floors a mixed-sign spectrum at epsilon") {
  Rng rng(47);
  Tensor gauss = Tensor::normal({6, 6}, rng, 0.0, 1.0);
  std::vector<double> sym(36);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j)
      sym[static_cast<size_t>(i * 6 + j)] =
          0.5 * (gauss.values()[static_cast<size_t>(i * 6 + j)] +
                 gauss.values()[static_cast<size_t>(j * 6 + i)]);
  Tensor x = Tensor::from_vector({6, 6}, std::move(sym));
  Tensor y = ops::reeig(x, 1e-4);
  CHECK(spd_min_eigenvalue(y) >= 1e-4 * (1.0 - 1e-9));
}

TEST_CASE("reeig is idempotent") {
  Rng rng(48);
  Tensor x = random_spd_tensor(5, rng, 1e-7, 2.0);
  Tensor once = ops::reeig(x, 1e-4);
  Tensor twice = ops::reeig(once, 1e-4);
  auto a = once.values();
  auto b = twice.values();
  for (size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-9);
}

TEST_CASE("reeig commutes with orthogonal conjugation on the spectrum") {
  Rng rng(49);
  const int d = 5;
  Tensor x = random_spd_tensor(d, rng, 1e-6, 2.0);
  Tensor gauss = Tensor::normal({d, d}, rng, 0.0, 1.0);
  std::vector<double> q = linalg::qr_orthonormalize(gauss.values(), d, d);

  // Q X Q^T
  std::vector<double> qx(static_cast<size_t>(d) * d, 0.0), qxq(static_cast<size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      double s = 0.0;
      for (int k = 0; k < d; ++k) s += q[static_cast<size_t>(i * d + k)] * x.at({k, j});
      qx[static_cast<size_t>(i * d + j)] = s;
    }
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      double s = 0.0;
      for (int k = 0; k < d; ++k)
        s += qx[static_cast<size_t>(i * d + k)] * q[static_cast<size_t>(j * d + k)];
      qxq[static_cast<size_t>(i * d + j)] = s;
    }

  Tensor lhs = ops::reeig(Tensor::from_vector({d, d}, qxq), 1e-4);
  Tensor rhs = ops::reeig(x, 1e-4);
  linalg::EigenPair el = linalg::sym_eig(lhs.values(), d);
  linalg::EigenPair er = linalg::sym_eig(rhs.values(), d);
  for (int i = 0; i < d; ++i) {
    CHECK(std::abs(el.eigenvalues[static_cast<size_t>(i)] -
                   er.eigenvalues[static_cast<size_t>(i)]) <= 1e-8);
  }
}

TEST_CASE("logeig of the identity is zero") {
  Tensor x = Tensor::from_vector({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor y = ops::logeig(x);
  for (double v : y.values()) CHECK(std::abs(v) <= 1e-15);
}

TEST_CASE("logeig of diag(e,1)") {
  Tensor x = Tensor::from_vector({2, 2}, {std::exp(1.0), 0, 0, 1});
  Tensor y = ops::logeig(x);
  CHECK(y.at({0, 0}) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(y.at({1, 1}) == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("expeig inverts logeig on random SPD input") {
  Rng rng(50);
  Tensor x = random_spd_tensor(6, rng, 0.1, 10.0);
  Tensor back = ops::expeig(ops::logeig(x));
  double num = 0.0, den = 0.0;
  auto a = back.values();
  auto b = x.values();
  for (size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  CHECK(std::sqrt(num / den) <= 1e-8);
}

TEST_CASE("logeig rejects non-positive eigenvalues") {
  Tensor x = Tensor::from_vector({2, 2}, {1.0, 0.0, 0.0, -0.5});
  CHECK_THROWS_AS(ops::logeig(x), NumericError);
}

TEST_CASE("upper_triangle_vec basics") {
  Tensor zero = Tensor::zeros({3, 3});
  Tensor zvec = ops::upper_triangle_vec(zero);
  for (double v : zvec.values()) CHECK(v == 0.0);

  Tensor eye = Tensor::from_vector({2, 2}, {1, 0, 0, 1});
  Tensor v = ops::upper_triangle_vec(eye);
  REQUIRE(v.shape() == Shape{3});
  CHECK(v.at({0}) == 1.0);
  CHECK(v.at({1}) == 0.0);
  CHECK(v.at({2}) == 1.0);
}

TEST_CASE("upper_triangle_vec is a Frobenius isometry") {
  Rng rng(51);
  for (int rep = 0; rep < 5; ++rep) {
    Tensor x = random_spd_tensor(5, rng, -2.0, 2.0);
    Tensor y = random_spd_tensor(5, rng, -1.0, 3.0);
    const double frob =
        oracles::frobenius_inner(std::vector<double>(x.values().begin(), x.values().end()),
                                 std::vector<double>(y.values().begin(), y.values().end()));
    Tensor vx = ops::upper_triangle_vec(x);
    Tensor vy = ops::upper_triangle_vec(y);
    double dot = 0.0;
    for (int64_t i = 0; i < vx.numel(); ++i) dot += vx.at({i}) * vy.at({i});
    CHECK(dot == doctest::Approx(frob).epsilon(1e-12));
  }
}

TEST_CASE("upper_triangle_vec strict mode skips the sqrt(2) scaling") {
  Tensor x = Tensor::from_vector({2, 2}, {1.0, 0.5, 0.5, 2.0});
  Tensor iso = ops::upper_triangle_vec(x, true);
  Tensor plain = ops::upper_triangle_vec(x, false);
  CHECK(iso.at({1}) == doctest::Approx(0.5 * std::sqrt(2.0)));
  CHECK(plain.at({1}) == 0.5);
}

TEST_CASE("bire_block with the top-half identity weight on I returns the identity") {
  const int d = 4;
  Tensor x = Tensor::zeros({d, d});
  for (int64_t i = 0; i < d; ++i) x.at({i, i}) = 1.0;
  Tensor w = Tensor::zeros({d, d / 2});
  for (int64_t i = 0; i < d / 2; ++i) w.at({i, i}) = 1.0;
  Tensor y = ops::bire_block(x, w, 1e-4);
  REQUIRE(y.shape() == Shape{d / 2, d / 2});
  for (int64_t i = 0; i < d / 2; ++i)
    for (int64_t j = 0; j < d / 2; ++j)
      CHECK(y.at({i, j}) == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-12));
}

TEST_CASE("bire_block halves the dimension and stays SPD") {
  Rng rng(52);
  BiReBlock block(6, 1e-4, 77);
  Tensor x = random_spd_tensor(6, rng, 0.01, 2.0);
  Tensor y = block.forward(x);
  REQUIRE(y.shape() == Shape{3, 3});
  CHECK(spd_min_eigenvalue(y) >= 1e-4 * (1.0 - 1e-9));
  CHECK(block.orthonormality_residual() <= 1e-12);
  CHECK_THROWS_AS(ops::bire_block(random_spd_tensor(5, rng, 0.1, 1.0), block.weight, 1e-4),
                  ShapeError);
}

TEST_CASE("bire_block gradient passes finite differences") {
  Rng rng(53);
  Tensor x = random_spd_tensor(6, rng, 0.3, 3.0);
  x.set_requires_grad(true);
  BiReBlock block(6, 1e-4, 78);
  Tensor weights = Tensor::uniform({3, 3}, rng, -1.0, 1.0);
  gradcheck::CheckCase cc{"bire_fd",
                          {x, block.weight},
                          [&block, x, weights] {
                            return ops::reduce_sum(ops::mul(block.forward(x), weights));
                          }};
  CHECK(gradcheck::max_rel_err(cc, 1e-5) <= 1e-4);
}

TEST_CASE("batched SPD ops process each batch element independently") {
  Rng rng(54);
  Tensor f = Tensor::uniform({2, 3, 2, 2, 2}, rng, -1.0, 1.0);
  Tensor batched = ops::spd_pool(f);
  REQUIRE(batched.shape() == Shape{2, 3, 3});
  for (int64_t b = 0; b < 2; ++b) {
    std::vector<double> one(f.values().begin() + b * 24, f.values().begin() + (b + 1) * 24);
    Tensor single = ops::spd_pool(Tensor::from_vector({3, 2, 2, 2}, std::move(one)));
    for (int64_t i = 0; i < 3; ++i)
      for (int64_t j = 0; j < 3; ++j) CHECK(batched.at({b, i, j}) == single.at({i, j}));
  }
}
