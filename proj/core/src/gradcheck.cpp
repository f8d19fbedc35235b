#include "spda/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <memory>
#include <numeric>

#include "spda/attention.hpp"
#include "spda/linalg.hpp"
#include "spda/segnet.hpp"
#include "spda/spd_layers.hpp"

namespace spda::gradcheck {

namespace {

// Mean rather than sum, then an exact power-of-two downscale: keeps |loss|
// small so the finite-difference cancellation noise (~eps * |loss| / 2h)
// stays well below the relative tolerance even for gradient entries under
// the 1e-8 denominator floor. The scaling is bit-exact and the negative
// control still trips on any sign flip.
Tensor weighted_sum(const Tensor& out, const Tensor& weights) {
  return ops::mul_scalar(ops::reduce_mean(ops::mul(out, weights)), 0x1.0p-6);
}

Tensor rand_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool leaf = true) {
  return Tensor::uniform(std::move(shape), rng, lo, hi, leaf);
}

// Values with pairwise gaps well above the finite-difference step, so the
// pooling argmax cannot flip under perturbation.
Tensor spaced_tensor(Shape shape, Rng& rng) {
  const int64_t n = shape_numel(shape);
  std::vector<int64_t> perm(static_cast<size_t>(n));
  std::iota(perm.begin(), perm.end(), int64_t{0});
  for (int64_t i = n - 1; i > 0; --i) {
    std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(rng.uniform_int(0, i))]);
  }
  std::vector<double> vals(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    vals[static_cast<size_t>(i)] =
        0.02 * static_cast<double>(perm[static_cast<size_t>(i)]) - 0.01 * static_cast<double>(n) +
        rng.uniform(-5e-4, 5e-4);
  }
  return Tensor::from_vector(std::move(shape), std::move(vals), /*requires_grad=*/true);
}

// Symmetric matrix Q diag(lambda) Q^T with a prescribed spectrum; bitwise
// symmetric by construction.
Tensor structured_sym(int d, Rng& rng, const std::vector<double>& spectrum, bool leaf = true) {
  Tensor gauss = Tensor::normal({d, d}, rng, 0.0, 1.0);
  std::vector<double> q = linalg::qr_orthonormalize(gauss.values(), d, d);
  std::vector<double> x(static_cast<size_t>(d) * d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      double s = 0.0;
      for (int k = 0; k < d; ++k) {
        s += q[static_cast<size_t>(i * d + k)] * spectrum[static_cast<size_t>(k)] *
             q[static_cast<size_t>(j * d + k)];
      }
      x[static_cast<size_t>(i * d + j)] = s;
    }
  }
  return Tensor::from_vector({d, d}, std::move(x), leaf);
}

Tensor random_spd(int d, Rng& rng, double lo, double hi) {
  std::vector<double> spectrum(static_cast<size_t>(d));
  for (double& l : spectrum) l = rng.uniform(lo, hi);
  return structured_sym(d, rng, spectrum);
}

Tensor mixed_spectrum_sym(int d, Rng& rng) {
  std::vector<double> spectrum(static_cast<size_t>(d));
  for (double& l : spectrum) {
    const double mag = rng.uniform(0.5, 2.0);
    l = rng.uniform() < 0.5 ? -mag : mag;
  }
  return structured_sym(d, rng, spectrum);
}

void randomize_head_biases(std::vector<Param>& params, Rng& rng) {
  for (Param& p : params) {
    if (p.name.find(".bias") != std::string::npos) {
      for (double& v : p.tensor.values()) v = rng.uniform(-0.3, 0.3);
    }
  }
}

CheckCase head_case(const std::string& name, AttentionVariant variant, uint64_t seed) {
  Rng rng(derive_seed(seed, name));
  AttentionConfig cfg;
  cfg.variant = variant;
  auto head = std::make_shared<AttentionHead>(variant, 8, cfg, rng.next_u64(), name);
  std::vector<Param> params;
  head->collect_params(params);
  randomize_head_biases(params, rng);

  Tensor fe = rand_tensor({1, 8, 4, 4, 4}, rng);
  Tensor fd = rand_tensor({1, 8, 4, 4, 4}, rng);
  Tensor weights = rand_tensor({1, 8, 4, 4, 4}, rng, -1.0, 1.0, /*leaf=*/false);

  CheckCase c;
  c.name = name;
  c.leaves = {fe, fd};
  for (Param& p : params) c.leaves.push_back(p.tensor);
  c.forward = [head, fe, fd, weights] {
    return weighted_sum(head->forward(fe, fd).first, weights);
  };
  return c;
}

std::vector<CheckCase> build_cases(uint64_t seed) {
  std::vector<CheckCase> cases;
  auto rng_for = [seed](const std::string& name) { return Rng(derive_seed(seed, name)); };

  {
    Rng rng = rng_for("conv3d");
    Tensor x = rand_tensor({1, 2, 3, 3, 3}, rng);
    Tensor k = rand_tensor({2, 2, 3, 3, 3}, rng);
    Tensor b = rand_tensor({2}, rng, -0.5, 0.5);
    Tensor w = rand_tensor({1, 2, 3, 3, 3}, rng, -1.0, 1.0, false);
    cases.push_back({"conv3d", {x, k, b}, [=] { return weighted_sum(ops::conv3d(x, k, b), w); }});
  }
  {
    Rng rng = rng_for("conv3d_1x1");
    Tensor x = rand_tensor({2, 3, 2, 2, 2}, rng);
    Tensor k = rand_tensor({2, 3, 1, 1, 1}, rng);
    Tensor b = rand_tensor({2}, rng, -0.5, 0.5);
    Tensor w = rand_tensor({2, 2, 2, 2, 2}, rng, -1.0, 1.0, false);
    cases.push_back(
        {"conv3d_1x1", {x, k, b}, [=] { return weighted_sum(ops::conv3d(x, k, b), w); }});
  }
  {
    Rng rng = rng_for("maxpool3d");
    Tensor x = spaced_tensor({1, 2, 4, 4, 4}, rng);
    Tensor w = rand_tensor({1, 2, 2, 2, 2}, rng, -1.0, 1.0, false);
    cases.push_back({"maxpool3d", {x}, [=] { return weighted_sum(ops::maxpool3d(x), w); }});
  }
  {
    Rng rng = rng_for("upsample_nearest3d");
    Tensor x = rand_tensor({1, 2, 2, 2, 2}, rng);
    Tensor w = rand_tensor({1, 2, 4, 4, 4}, rng, -1.0, 1.0, false);
    cases.push_back(
        {"upsample_nearest3d", {x}, [=] { return weighted_sum(ops::upsample_nearest3d(x), w); }});
  }
  {
    Rng rng = rng_for("linear");
    Tensor x = rand_tensor({3, 5}, rng);
    Tensor wt = rand_tensor({2, 5}, rng);
    Tensor b = rand_tensor({2}, rng, -0.5, 0.5);
    Tensor w = rand_tensor({3, 2}, rng, -1.0, 1.0, false);
    cases.push_back({"linear", {x, wt, b}, [=] { return weighted_sum(ops::linear(x, wt, b), w); }});
  }
  {
    Rng rng = rng_for("relu");
    std::vector<double> vals(24);
    for (double& v : vals) {
      const double u = rng.uniform(-1.0, 1.0);
      v = u + (u >= 0.0 ? 0.05 : -0.05);  // keep away from the kink
    }
    Tensor x = Tensor::from_vector({24}, std::move(vals), true);
    Tensor w = rand_tensor({24}, rng, -1.0, 1.0, false);
    cases.push_back({"relu", {x}, [=] { return weighted_sum(ops::relu(x), w); }});
  }
  {
    Rng rng = rng_for("sigmoid");
    Tensor x = rand_tensor({24}, rng, -3.0, 3.0);
    Tensor w = rand_tensor({24}, rng, -1.0, 1.0, false);
    cases.push_back({"sigmoid", {x}, [=] { return weighted_sum(ops::sigmoid(x), w); }});
  }
  {
    Rng rng = rng_for("log");
    Tensor x = rand_tensor({24}, rng, 0.2, 3.0);
    Tensor w = rand_tensor({24}, rng, -1.0, 1.0, false);
    cases.push_back({"log", {x}, [=] { return weighted_sum(ops::log(x), w); }});
  }
  {
    Rng rng = rng_for("clamp");
    std::vector<double> vals(24);
    for (double& v : vals) {
      v = rng.uniform(-1.0, 1.0);
      if (std::abs(v - 0.5) < 0.05) v += v < 0.5 ? -0.1 : 0.1;
      if (std::abs(v + 0.5) < 0.05) v += v < -0.5 ? -0.1 : 0.1;
    }
    Tensor x = Tensor::from_vector({24}, std::move(vals), true);
    Tensor w = rand_tensor({24}, rng, -1.0, 1.0, false);
    cases.push_back({"clamp", {x}, [=] { return weighted_sum(ops::clamp(x, -0.5, 0.5), w); }});
  }
  {
    Rng rng = rng_for("add");
    Tensor a = rand_tensor({2, 3, 4}, rng);
    Tensor b = rand_tensor({2, 3, 4}, rng);
    Tensor w = rand_tensor({2, 3, 4}, rng, -1.0, 1.0, false);
    cases.push_back({"add", {a, b}, [=] { return weighted_sum(ops::add(a, b), w); }});
  }
  {
    Rng rng = rng_for("sub");
    Tensor a = rand_tensor({2, 3, 4}, rng);
    Tensor b = rand_tensor({2, 3, 4}, rng);
    Tensor w = rand_tensor({2, 3, 4}, rng, -1.0, 1.0, false);
    cases.push_back({"sub", {a, b}, [=] { return weighted_sum(ops::sub(a, b), w); }});
  }
  {
    Rng rng = rng_for("mul");
    Tensor a = rand_tensor({2, 3, 4}, rng);
    Tensor b = rand_tensor({2, 3, 4}, rng);
    Tensor w = rand_tensor({2, 3, 4}, rng, -1.0, 1.0, false);
    cases.push_back({"mul", {a, b}, [=] { return weighted_sum(ops::mul(a, b), w); }});
  }
  {
    Rng rng = rng_for("div");
    Tensor a = rand_tensor({2, 3, 4}, rng);
    std::vector<double> den(24);
    for (double& v : den) {
      const double mag = rng.uniform(0.5, 1.5);
      v = rng.uniform() < 0.5 ? -mag : mag;
    }
    Tensor b = Tensor::from_vector({2, 3, 4}, std::move(den), true);
    Tensor w = rand_tensor({2, 3, 4}, rng, -1.0, 1.0, false);
    cases.push_back({"div", {a, b}, [=] { return weighted_sum(ops::div(a, b), w); }});
  }
  {
    Rng rng = rng_for("add_scalar");
    Tensor x = rand_tensor({12}, rng);
    Tensor w = rand_tensor({12}, rng, -1.0, 1.0, false);
    cases.push_back({"add_scalar", {x}, [=] { return weighted_sum(ops::add_scalar(x, 0.7), w); }});
  }
  {
    Rng rng = rng_for("mul_scalar");
    Tensor x = rand_tensor({12}, rng);
    Tensor w = rand_tensor({12}, rng, -1.0, 1.0, false);
    cases.push_back({"mul_scalar", {x}, [=] { return weighted_sum(ops::mul_scalar(x, -1.3), w); }});
  }
  {
    Rng rng = rng_for("concat");
    Tensor a = rand_tensor({2, 3}, rng);
    Tensor b = rand_tensor({2, 5}, rng);
    Tensor w = rand_tensor({2, 8}, rng, -1.0, 1.0, false);
    cases.push_back({"concat", {a, b}, [=] { return weighted_sum(ops::concat({a, b}, 1), w); }});
  }
  {
    Rng rng = rng_for("reshape");
    Tensor x = rand_tensor({2, 3, 4}, rng);
    Tensor w = rand_tensor({4, 6}, rng, -1.0, 1.0, false);
    cases.push_back({"reshape", {x}, [=] { return weighted_sum(ops::reshape(x, {4, 6}), w); }});
  }
  {
    Rng rng = rng_for("batch_matmul");
    Tensor a = rand_tensor({2, 3, 4}, rng);
    Tensor b = rand_tensor({2, 4, 2}, rng);
    Tensor w = rand_tensor({2, 3, 2}, rng, -1.0, 1.0, false);
    cases.push_back({"batch_matmul", {a, b}, [=] { return weighted_sum(ops::batch_matmul(a, b), w); }});
  }
  {
    Rng rng = rng_for("reduce_sum");
    Tensor x = rand_tensor({3, 4}, rng);
    cases.push_back({"reduce_sum", {x}, [=] { return ops::reduce_sum(x); }});
  }
  {
    Rng rng = rng_for("reduce_mean");
    Tensor x = rand_tensor({3, 4}, rng);
    cases.push_back({"reduce_mean", {x}, [=] { return ops::reduce_mean(x); }});
  }
  {
    Rng rng = rng_for("channel_scale");
    Tensor f = rand_tensor({2, 3, 2, 2, 2}, rng);
    Tensor c = rand_tensor({2, 3}, rng, 0.2, 1.5);
    Tensor w = rand_tensor({2, 3, 2, 2, 2}, rng, -1.0, 1.0, false);
    cases.push_back({"channel_scale", {f, c}, [=] { return weighted_sum(ops::channel_scale(f, c), w); }});
  }
  {
    Rng rng = rng_for("gap3d");
    Tensor x = rand_tensor({2, 3, 3, 3, 3}, rng);
    Tensor w = rand_tensor({2, 3}, rng, -1.0, 1.0, false);
    cases.push_back({"gap3d", {x}, [=] { return weighted_sum(ops::gap3d(x), w); }});
  }
  {
    Rng rng = rng_for("batchnorm3d");
    Tensor x = rand_tensor({2, 2, 3, 3, 3}, rng);
    Tensor gamma = rand_tensor({2}, rng, 0.5, 1.5);
    Tensor beta = rand_tensor({2}, rng, -0.5, 0.5);
    auto rm = std::make_shared<Tensor>(Tensor::zeros({2}));
    auto rv = std::make_shared<Tensor>(Tensor::ones({2}));
    Tensor w = rand_tensor({2, 2, 3, 3, 3}, rng, -1.0, 1.0, false);
    cases.push_back({"batchnorm3d",
                     {x, gamma, beta},
                     [=] {
                       return weighted_sum(ops::batchnorm3d(x, gamma, beta, *rm, *rv, 0.1, 1e-5,
                                                            /*train=*/true, /*update_running=*/false),
                                           w);
                     }});
  }
  {
    Rng rng = rng_for("spd_pool");
    Tensor f = rand_tensor({4, 3, 3, 3}, rng);
    Tensor w = rand_tensor({4, 4}, rng, -1.0, 1.0, false);
    cases.push_back({"spd_pool", {f}, [=] { return weighted_sum(ops::spd_pool(f), w); }});
  }
  {
    Rng rng = rng_for("spd_pool_batched");
    Tensor f = rand_tensor({2, 3, 2, 2, 2}, rng);
    Tensor w = rand_tensor({2, 3, 3}, rng, -1.0, 1.0, false);
    cases.push_back({"spd_pool_batched", {f}, [=] { return weighted_sum(ops::spd_pool(f), w); }});
  }
  {
    Rng rng = rng_for("bimap");
    Tensor x = random_spd(4, rng, 0.3, 3.0);
    Tensor gauss = Tensor::normal({4, 2}, rng, 0.0, 1.0);
    Tensor wt = Tensor::from_vector({4, 2}, linalg::qr_orthonormalize(gauss.values(), 4, 2), true);
    Tensor w = rand_tensor({2, 2}, rng, -1.0, 1.0, false);
    cases.push_back({"bimap", {x, wt}, [=] { return weighted_sum(ops::bimap(x, wt), w); }});
  }
  {
    Rng rng = rng_for("reeig");
    Tensor x = mixed_spectrum_sym(6, rng);
    Tensor w = rand_tensor({6, 6}, rng, -1.0, 1.0, false);
    cases.push_back({"reeig", {x}, [=] { return weighted_sum(ops::reeig(x, 1e-4), w); }});
  }
  {
    Rng rng = rng_for("logeig");
    Tensor x = random_spd(6, rng, 0.3, 3.0);
    Tensor w = rand_tensor({6, 6}, rng, -1.0, 1.0, false);
    cases.push_back({"logeig", {x}, [=] { return weighted_sum(ops::logeig(x), w); }});
  }
  {
    Rng rng = rng_for("expeig");
    Tensor x = mixed_spectrum_sym(5, rng);
    Tensor w = rand_tensor({5, 5}, rng, -1.0, 1.0, false);
    cases.push_back({"expeig", {x}, [=] { return weighted_sum(ops::expeig(x), w); }});
  }
  {
    Rng rng = rng_for("upper_triangle_vec");
    Tensor x = random_spd(5, rng, 0.2, 2.0);
    Tensor w = rand_tensor({15}, rng, -1.0, 1.0, false);
    cases.push_back(
        {"upper_triangle_vec", {x}, [=] { return weighted_sum(ops::upper_triangle_vec(x), w); }});
  }
  {
    Rng rng = rng_for("bire_block");
    Tensor x = random_spd(6, rng, 0.3, 3.0);
    Tensor gauss = Tensor::normal({6, 3}, rng, 0.0, 1.0);
    Tensor wt = Tensor::from_vector({6, 3}, linalg::qr_orthonormalize(gauss.values(), 6, 3), true);
    Tensor w = rand_tensor({3, 3}, rng, -1.0, 1.0, false);
    cases.push_back(
        {"bire_block", {x, wt}, [=] { return weighted_sum(ops::bire_block(x, wt, 1e-4), w); }});
  }
  {
    Rng rng = rng_for("dice_bce_loss");
    Tensor pred = rand_tensor({1, 1, 4, 4, 4}, rng, 0.1, 0.9);
    std::vector<double> tgt(64);
    for (double& v : tgt) v = rng.uniform() < 0.3 ? 1.0 : 0.0;
    Tensor target = Tensor::from_vector({1, 1, 4, 4, 4}, std::move(tgt));
    cases.push_back({"dice_bce_loss", {pred}, [=] { return dice_bce_loss(pred, target); }});
  }

  cases.push_back(head_case("foa_head", AttentionVariant::kFoa, seed));
  cases.push_back(head_case("soa_head", AttentionVariant::kSoa, seed));
  cases.push_back(head_case("soga_head", AttentionVariant::kSoga, seed));
  return cases;
}

}  // namespace

std::vector<std::string> op_names() {
  std::vector<std::string> names;
  for (const CheckCase& c : build_cases(0)) names.push_back(c.name);
  return names;
}

double max_rel_err(CheckCase& check, double h) { return max_rel_err(check, h, false); }

double max_rel_err(CheckCase& check, double h, bool invert_analytic) {
  Tape::get().clear();
  for (Tensor& t : check.leaves) t.zero_grad();
  Tensor loss = check.forward();
  spda::backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(check.leaves.size());
  for (Tensor& t : check.leaves) {
    analytic.emplace_back(t.grad().begin(), t.grad().end());
  }
  if (invert_analytic) {
    for (auto& g : analytic) {
      for (double& v : g) v = -v;
    }
  }
  Tape::get().clear();

  double worst = 0.0;
  NoGradGuard guard;
  for (size_t li = 0; li < check.leaves.size(); ++li) {
    auto vals = check.leaves[li].values();
    for (size_t i = 0; i < vals.size(); ++i) {
      const double orig = vals[i];
      vals[i] = orig + h;
      const double fp = check.forward().item();
      vals[i] = orig - h;
      const double fm = check.forward().item();
      vals[i] = orig;
      const double fd = (fp - fm) / (2.0 * h);
      const double an = analytic[li][i];
      const double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
      worst = std::max(worst, std::abs(fd - an) / denom);
    }
  }
  return worst;
}

Report run(uint64_t base_seed, int n_seeds, const std::string& inject_wrong_sign,
           double tolerance) {
  const auto t0 = std::chrono::steady_clock::now();
  Report report;
  report.seeds = n_seeds;

  std::vector<std::string> names = op_names();
  report.entries.reserve(names.size());
  for (const std::string& name : names) {
    report.entries.push_back({name, 0.0, tolerance, true});
  }

  for (int s = 0; s < n_seeds; ++s) {
    std::vector<CheckCase> cases = build_cases(derive_seed(base_seed, static_cast<uint64_t>(s)));
    for (size_t i = 0; i < cases.size(); ++i) {
      // Negative control: a sign-flipped analytic gradient must be caught by
      // the comparison itself.
      const bool invert = !inject_wrong_sign.empty() && cases[i].name == inject_wrong_sign;
      const double err = max_rel_err(cases[i], 1e-5, invert);
      report.entries[i].max_rel_err = std::max(report.entries[i].max_rel_err, err);
    }
  }

  report.all_pass = true;
  for (CheckEntry& e : report.entries) {
    e.pass = e.max_rel_err <= e.tolerance;
    report.all_pass = report.all_pass && e.pass;
  }
  report.elapsed_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace spda::gradcheck
