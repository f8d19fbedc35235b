#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "spda/evalkit.hpp"

using namespace spda;
using namespace spda::eval;

namespace {

Tensor map_with(const std::vector<std::pair<std::vector<int64_t>, double>>& blobs,
                int64_t s = 8) {
  Tensor m = Tensor::zeros({s, s, s});
  auto v = m.values();
  for (const auto& [voxels, value] : blobs) {
    for (int64_t lin : voxels) v[static_cast<size_t>(lin)] = value;
  }
  return m;
}

// Linear indices of a cube [z0,z0+n) x [y0,y0+n) x [x0,x0+n) in an s^3 grid.
std::vector<int64_t> cube(int64_t z0, int64_t y0, int64_t x0, int64_t n, int64_t s = 8) {
  std::vector<int64_t> out;
  for (int64_t z = z0; z < z0 + n; ++z)
    for (int64_t y = y0; y < y0 + n; ++y)
      for (int64_t x = x0; x < x0 + n; ++x) out.push_back((z * s + y) * s + x);
  return out;
}

GtLesion lesion(std::vector<int64_t> voxels, double mm3 = 10.0) {
  GtLesion l;
  std::sort(voxels.begin(), voxels.end());
  l.voxels = std::move(voxels);
  l.volume_mm3 = mm3;
  return l;
}

DetectionCandidate cand(std::vector<int64_t> voxels, double conf) {
  DetectionCandidate c;
  std::sort(voxels.begin(), voxels.end());
  c.voxels = std::move(voxels);
  c.confidence = conf;
  return c;
}

}  // namespace

TEST_CASE("extract_candidates of an all-zero map is empty") {
  CHECK(extract_candidates(Tensor::zeros({8, 8, 8})).empty());
}

TEST_CASE("extract_candidates finds a single blob with its peak confidence") {
  // Flat blob: the whole component appears at the first admitting threshold.
  Tensor flat = map_with({{cube(2, 2, 2, 2), 0.9}});
  auto cands = extract_candidates(flat);
  REQUIRE(cands.size() == 1);
  CHECK(cands[0].confidence == 0.9);
  CHECK(cands[0].voxels.size() == 8);

  // Peaked blob: the candidate freezes at the highest threshold where it
  // first appears; later, larger components overlap it and are skipped.
  Tensor peaked = map_with({{cube(2, 2, 2, 2), 0.8}});
  peaked.at({2, 2, 2}) = 0.9;
  cands = extract_candidates(peaked);
  REQUIRE(cands.size() == 1);
  CHECK(cands[0].confidence == 0.9);
}

TEST_CASE("two disjoint blobs come out ordered by confidence") {
  Tensor m = map_with({{cube(1, 1, 1, 2), 0.9}, {cube(5, 5, 5, 2), 0.6}});
  auto cands = extract_candidates(m);
  REQUIRE(cands.size() == 2);
  CHECK(cands[0].confidence == 0.9);
  CHECK(cands[1].confidence == 0.6);
  CHECK(cands[0].voxels.front() == cube(1, 1, 1, 2).front());
}

TEST_CASE("extracted candidates are pairwise disjoint") {
  Rng rng(81);
  Tensor m = Tensor::zeros({8, 8, 8});
  for (double& v : m.values()) v = rng.uniform(0.0, 1.0);
  auto cands = extract_candidates(m);
  std::vector<uint8_t> seen(512, 0);
  for (const auto& c : cands) {
    CHECK(c.confidence > 0.0);
    CHECK(c.confidence <= 1.0);
    for (int64_t lin : c.voxels) {
      CHECK(!seen[static_cast<size_t>(lin)]);
      seen[static_cast<size_t>(lin)] = 1;
    }
  }
  Tensor bad = Tensor::full({2, 2, 2}, 1.5);
  CHECK_THROWS_AS(extract_candidates(bad), NumericError);
}

TEST_CASE("dsc basics and symmetry") {
  Tensor a = map_with({{cube(0, 0, 0, 2), 1.0}});
  Tensor b = map_with({{cube(0, 0, 0, 2), 1.0}});
  CHECK(dsc(a, b) == 1.0);
  Tensor c = map_with({{cube(4, 4, 4, 2), 1.0}});
  CHECK(dsc(a, c) == 0.0);
  CHECK(dsc(Tensor::zeros({8, 8, 8}), Tensor::zeros({8, 8, 8})) == 1.0);

  // Equal-size blobs sharing half their voxels.
  Tensor p = map_with({{cube(0, 0, 0, 2), 1.0}});     // 8 voxels at x in [0,2)
  Tensor g = map_with({{cube(0, 0, 1, 2), 1.0}});     // shifted by 1 in x: 4 shared
  CHECK(dsc(p, g) == 0.5);
  CHECK(dsc(p, g) == dsc(g, p));
}

TEST_CASE("average precision on the trivial one-candidate scenarios") {
  {
    std::vector<CaseDetections> cases(1);
    cases[0].gt = {lesion(cube(0, 0, 0, 2))};
    auto c = cube(0, 0, 0, 2);
    c.resize(4);  // IoU 4/8 = 0.5
    cases[0].candidates = {cand(c, 0.8)};
    CHECK(average_precision(greedy_match(cases, 0.1)) == 1.0);
  }
  {
    std::vector<CaseDetections> cases(1);
    cases[0].gt = {lesion(cube(0, 0, 0, 2))};  // 8 voxels
    auto far = cube(5, 5, 5, 3);               // 27 voxels
    far.push_back(cube(0, 0, 0, 2)[0]);        // 1 shared voxel: IoU 1/34 < 0.1
    cases[0].candidates = {cand(far, 0.8)};
    CHECK(average_precision(greedy_match(cases, 0.1)) == 0.0);
  }
}

TEST_CASE("average precision matches the exhaustive PR oracle on a 3-candidate scenario") {
  // Confidences 0.9 (TP), 0.8 (FP), 0.7 (TP) over 2 GT lesions.
  std::vector<CaseDetections> cases(1);
  cases[0].gt = {lesion(cube(0, 0, 0, 2)), lesion(cube(5, 5, 5, 2))};
  cases[0].candidates = {cand(cube(0, 0, 0, 2), 0.9), cand(cube(3, 3, 3, 1), 0.8),
                         cand(cube(5, 5, 5, 2), 0.7)};
  MatchingResult match = greedy_match(cases, 0.1);
  const double ap = average_precision(match);
  CHECK(ap == doctest::Approx(5.0 / 6.0).epsilon(1e-15));
  CHECK(ap == doctest::Approx(oracles::ap_ref({1, 0, 1}, 2)).epsilon(1e-15));
}

TEST_CASE("average precision is invariant under monotone confidence transforms") {
  std::vector<CaseDetections> cases(2);
  cases[0].gt = {lesion(cube(0, 0, 0, 2))};
  cases[0].candidates = {cand(cube(0, 0, 0, 2), 0.55), cand(cube(4, 4, 4, 1), 0.35)};
  cases[1].gt = {lesion(cube(2, 2, 2, 2))};
  cases[1].candidates = {cand(cube(6, 6, 6, 1), 0.75), cand(cube(2, 2, 2, 2), 0.15)};
  const double base = average_precision(greedy_match(cases, 0.1));
  for (auto& cd : cases) {
    for (auto& c : cd.candidates) {
      c.confidence = std::pow(c.confidence, 3) + 2.0 * c.confidence;  // strictly monotone
    }
  }
  CHECK(average_precision(greedy_match(cases, 0.1)) == base);
}

TEST_CASE("greedy matching is one-to-one and consumes lesions in rank order") {
  std::vector<CaseDetections> cases(1);
  cases[0].gt = {lesion(cube(0, 0, 0, 2)), lesion(cube(0, 0, 2, 2))};
  auto straddle = cube(0, 0, 1, 2);  // IoU 1/3 with both lesions
  cases[0].candidates = {cand(straddle, 0.9), cand(cube(0, 0, 2, 2), 0.8)};
  MatchingResult match = greedy_match(cases, 0.1);
  // The straddling candidate takes lesion 0 (equal IoU, lowest index wins);
  // the second candidate still matches lesion 1 exactly.
  CHECK(match.ranked[0].is_tp);
  CHECK(match.ranked[0].matched_gt == 0);
  CHECK(match.ranked[1].is_tp);
  CHECK(match.ranked[1].matched_gt == 1);
  CHECK(match.ranked[1].iou == 1.0);
}

TEST_CASE("auc_roc basics against the all-pairs oracle") {
  CHECK(auc_roc({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}) == 1.0);
  CHECK(auc_roc({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0}) == 0.5);

  std::vector<double> scores = {0.9, 0.1, 0.6, 0.6, 0.3, 0.8};
  std::vector<int> labels = {1, 0, 1, 0, 0, 1};
  CHECK(auc_roc(scores, labels) ==
        doctest::Approx(oracles::auc_pairs_ref(scores, labels)).epsilon(1e-15));

  std::vector<int> flipped;
  for (int l : labels) flipped.push_back(1 - l);
  CHECK(std::abs(auc_roc(scores, labels) + auc_roc(scores, flipped) - 1.0) <= 1e-12);

  CHECK_THROWS_AS(auc_roc({0.5, 0.6}, {1, 1}), Error);
}

TEST_CASE("sensitivity at one FP per case on trivial scenarios") {
  {
    // Every candidate is a TP hitting every lesion.
    std::vector<CaseDetections> cases(2);
    cases[0].gt = {lesion(cube(0, 0, 0, 2))};
    cases[0].candidates = {cand(cube(0, 0, 0, 2), 0.9)};
    cases[1].gt = {lesion(cube(4, 4, 4, 2))};
    cases[1].candidates = {cand(cube(4, 4, 4, 2), 0.7)};
    CHECK(sensitivity_at_fp(greedy_match(cases, 0.1), 1.0) == 1.0);
  }
  {
    std::vector<CaseDetections> cases(2);
    cases[0].gt = {lesion(cube(0, 0, 0, 2))};
    CHECK(sensitivity_at_fp(greedy_match(cases, 0.1), 1.0) == 0.0);  // no candidates
  }
}

TEST_CASE("sensitivity at one FP per case matches a hand-enumerated FROC") {
  // 4 cases, 2 GT lesions. A burst of five FPs at confidences 0.8..0.6 makes
  // every threshold below 0.65 exceed the budget, so the feasible optimum is
  // sensitivity 0.5 even though threshold 0.5 would reach 1.0.
  std::vector<CaseDetections> cases(4);
  cases[0].gt = {lesion(cube(0, 0, 0, 2))};
  cases[0].candidates = {cand(cube(0, 0, 0, 2), 0.9)};
  cases[1].gt = {lesion(cube(4, 4, 4, 2))};
  cases[1].candidates = {cand(cube(4, 4, 4, 2), 0.5)};
  cases[2].candidates = {cand(cube(0, 0, 4, 1), 0.8), cand(cube(0, 4, 0, 1), 0.75),
                         cand(cube(4, 0, 0, 1), 0.7), cand(cube(6, 6, 0, 1), 0.65),
                         cand(cube(0, 6, 6, 1), 0.6)};
  std::vector<FrocPoint> curve;
  const double sen = sensitivity_at_fp(greedy_match(cases, 0.1), 1.0, &curve);
  CHECK(sen == 0.5);
  // Hand enumeration: thresholds 0.9,...,0.6,0.5 with mean FP
  // 0, .25, .5, .75, 1.0, 1.25, 1.25 and sensitivity 0.5 until the last.
  REQUIRE(curve.size() == 7);
  CHECK(curve[4].threshold == 0.65);
  CHECK(curve[4].mean_fp == 1.0);
  CHECK(curve[4].sensitivity == 0.5);
  CHECK(curve[6].threshold == 0.5);
  CHECK(curve[6].mean_fp == 1.25);
  CHECK(curve[6].sensitivity == 1.0);
}

TEST_CASE("infeasible FP budgets fall back to the strictest threshold") {
  std::vector<CaseDetections> cases(2);
  cases[0].gt = {lesion(cube(0, 0, 0, 2))};
  cases[0].candidates = {cand(cube(4, 4, 4, 1), 0.9), cand(cube(4, 4, 0, 1), 0.9),
                         cand(cube(0, 4, 4, 1), 0.9)};
  // mean FP at the only threshold is 1.5 > 1.0.
  CHECK(sensitivity_at_fp(greedy_match(cases, 0.1), 1.0) == 0.0);
}

TEST_CASE("fixed-mode stratification reproduces the mm3 class boundaries") {
  const SizeThresholds t = size_thresholds({}, SizeMode::kFixed);
  CHECK(t.small_max == 931.0);
  CHECK(t.large_min == 2337.0);
  CHECK(size_class_of(100.0, t) == 0);
  CHECK(size_class_of(1500.0, t) == 1);
  CHECK(size_class_of(5000.0, t) == 2);
  // Boundary rule: 931 and 2337 both land in medium.
  CHECK(size_class_of(931.0, t) == 1);
  CHECK(size_class_of(2337.0, t) == 1);
  CHECK(size_class_of(930.999, t) == 0);
  CHECK(size_class_of(2337.001, t) == 2);
}

TEST_CASE("percentile stratification with a degenerate value set puts everything in medium") {
  std::vector<double> volumes(5, 1200.0);
  const SizeThresholds t = size_thresholds(volumes, SizeMode::kPercentile);
  CHECK(t.small_max == 1200.0);
  CHECK(t.large_min == 1200.0);
  for (double v : volumes) CHECK(size_class_of(v, t) == 1);
}

TEST_CASE("percentile thresholds match the nearest-rank oracle") {
  Rng rng(82);
  std::vector<double> volumes;
  for (int i = 0; i < 9; ++i) volumes.push_back(rng.uniform(50.0, 5000.0));
  const SizeThresholds t = size_thresholds(volumes, SizeMode::kPercentile);
  CHECK(t.small_max == oracles::percentile_ref(volumes, 33.0));
  CHECK(t.large_min == oracles::percentile_ref(volumes, 66.0));
  CHECK(percentile_nearest_rank(volumes, 33.0) == oracles::percentile_ref(volumes, 33.0));
  CHECK(percentile_nearest_rank(volumes, 66.0) == oracles::percentile_ref(volumes, 66.0));
}

TEST_CASE("evaluating the ground truth as its own prediction is perfect") {
  std::vector<EvalCaseInput> inputs(3);
  for (int i = 0; i < 3; ++i) {
    Tensor mask = i < 2 ? map_with({{cube(1 + i, 1, 1, 2), 1.0}}) : Tensor::zeros({8, 8, 8});
    inputs[static_cast<size_t>(i)].id = "case_" + std::to_string(i);
    inputs[static_cast<size_t>(i)].prob_map = mask;
    inputs[static_cast<size_t>(i)].gt_mask = mask;
    inputs[static_cast<size_t>(i)].label = i < 2;
  }
  EvalOptions opts;
  EvalReport report = evaluate_cases(inputs, opts);
  CHECK(report.mean_dsc == 1.0);
  CHECK(report.ap == 1.0);
  CHECK(report.sen_at_fp == 1.0);
  REQUIRE(report.has_auc);
  CHECK(report.auc == 1.0);
}

TEST_CASE("the all-zero predictor scores zero AP and chance AUC on balanced labels") {
  std::vector<EvalCaseInput> inputs(4);
  for (int i = 0; i < 4; ++i) {
    inputs[static_cast<size_t>(i)].id = "case_" + std::to_string(i);
    inputs[static_cast<size_t>(i)].prob_map = Tensor::zeros({8, 8, 8});
    inputs[static_cast<size_t>(i)].gt_mask =
        i < 2 ? map_with({{cube(2, 2, 2, 2), 1.0}}) : Tensor::zeros({8, 8, 8});
    inputs[static_cast<size_t>(i)].label = i < 2;
  }
  EvalReport report = evaluate_cases(inputs, EvalOptions{});
  CHECK(report.ap == 0.0);
  CHECK(report.sen_at_fp == 0.0);
  REQUIRE(report.has_auc);
  CHECK(report.auc == 0.5);
  CHECK(report.mean_dsc == 0.5);  // two empty-vs-empty cases at 1, two misses at 0
}

TEST_CASE("evaluation reports are deterministic and thread-count independent") {
  Rng rng(83);
  std::vector<EvalCaseInput> inputs(6);
  for (int i = 0; i < 6; ++i) {
    Tensor prob = Tensor::zeros({8, 8, 8});
    for (double& v : prob.values()) v = rng.uniform(0.0, 1.0);
    inputs[static_cast<size_t>(i)].id = "case_" + std::to_string(i);
    inputs[static_cast<size_t>(i)].prob_map = prob;
    inputs[static_cast<size_t>(i)].gt_mask =
        i % 2 ? map_with({{cube(2, 2, 2, 3), 1.0}}) : Tensor::zeros({8, 8, 8});
    inputs[static_cast<size_t>(i)].label = i % 2 == 1;
  }
  EvalOptions seq;
  seq.threads = 1;
  EvalOptions par;
  par.threads = 4;
  const std::string a = evaluate_cases(inputs, seq).to_json("", 1);
  const std::string b = evaluate_cases(inputs, par).to_json("", 1);
  const std::string c = evaluate_cases(inputs, seq).to_json("", 1);
  CHECK(a == b);
  CHECK(a == c);
}

TEST_CASE("per-group metrics keep every candidate eligible as a false positive") {
  // One small and one large lesion; one candidate hits the large lesion.
  std::vector<EvalCaseInput> inputs(1);
  Tensor gt = Tensor::zeros({8, 8, 8});
  for (int64_t lin : cube(0, 0, 0, 1)) gt.values()[static_cast<size_t>(lin)] = 1.0;  // 1 voxel
  for (int64_t lin : cube(4, 4, 4, 3)) gt.values()[static_cast<size_t>(lin)] = 1.0;  // 27 voxels
  Tensor prob = Tensor::zeros({8, 8, 8});
  for (int64_t lin : cube(4, 4, 4, 3)) prob.values()[static_cast<size_t>(lin)] = 0.9;
  inputs[0] = {"case_0", prob, gt, true};

  EvalOptions opts;
  opts.size_mode = SizeMode::kFixed;
  opts.fixed_small = 10.0;   // 1-voxel lesion (0.75 mm3) small
  opts.fixed_large = 15.0;   // 27-voxel lesion (20.25 mm3) large
  EvalReport report = evaluate_cases(inputs, opts);
  CHECK(report.groups[0].n_lesions == 1);
  CHECK(report.groups[2].n_lesions == 1);
  CHECK(report.groups[2].ap == 1.0);
  // In the small group the only candidate cannot match and counts as FP.
  CHECK(report.groups[0].ap == 0.0);
  CHECK(report.groups[0].sen_at_fp == 0.0);
}
