#include "spda/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace spda::eval {

namespace {

using nlohmann::json;

struct Dims {
  int64_t h, w, d;
};

Dims dims_of(const Tensor& t, const char* what) {
  if (t.rank() != 3) throw ShapeError(std::string(what) + ": expected [H,W,D]");
  return {t.dim(0), t.dim(1), t.dim(2)};
}

// 26-connected components over an inclusion predicate, visited in linear
// scan order so labels are deterministic. Returns sorted voxel lists.
template <typename Pred>
std::vector<std::vector<int64_t>> connected_components(const Dims& dm, Pred include) {
  const int64_t vol = dm.h * dm.w * dm.d;
  std::vector<uint8_t> visited(static_cast<size_t>(vol), 0);
  std::vector<std::vector<int64_t>> comps;
  std::vector<int64_t> stack;
  for (int64_t start = 0; start < vol; ++start) {
    if (visited[static_cast<size_t>(start)] || !include(start)) continue;
    std::vector<int64_t> comp;
    stack.clear();
    stack.push_back(start);
    visited[static_cast<size_t>(start)] = 1;
    while (!stack.empty()) {
      const int64_t lin = stack.back();
      stack.pop_back();
      comp.push_back(lin);
      const int64_t z = lin / (dm.w * dm.d);
      const int64_t y = (lin / dm.d) % dm.w;
      const int64_t x = lin % dm.d;
      for (int64_t dz = -1; dz <= 1; ++dz) {
        for (int64_t dy = -1; dy <= 1; ++dy) {
          for (int64_t dx = -1; dx <= 1; ++dx) {
            if (!dz && !dy && !dx) continue;
            const int64_t z2 = z + dz, y2 = y + dy, x2 = x + dx;
            if (z2 < 0 || z2 >= dm.h || y2 < 0 || y2 >= dm.w || x2 < 0 || x2 >= dm.d) continue;
            const int64_t lin2 = (z2 * dm.w + y2) * dm.d + x2;
            if (!visited[static_cast<size_t>(lin2)] && include(lin2)) {
              visited[static_cast<size_t>(lin2)] = 1;
              stack.push_back(lin2);
            }
          }
        }
      }
    }
    std::sort(comp.begin(), comp.end());
    comps.push_back(std::move(comp));
  }
  return comps;
}

double iou_sorted(const std::vector<int64_t>& a, const std::vector<int64_t>& b) {
  size_t i = 0, j = 0, inter = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] < b[j]) {
      ++i;
    } else if (a[i] > b[j]) {
      ++j;
    } else {
      ++inter;
      ++i;
      ++j;
    }
  }
  const size_t uni = a.size() + b.size() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

void run_parallel(int64_t n, int threads, const std::function<void(int64_t)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int64_t> next{0};
  auto worker = [&] {
    for (;;) {
      const int64_t i = next.fetch_add(1);
      if (i >= n) return;
      fn(i);
    }
  };
  std::vector<std::thread> pool;
  const int actual = static_cast<int>(std::min<int64_t>(threads, n));
  pool.reserve(static_cast<size_t>(actual));
  for (int t = 0; t < actual; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
}

}  // namespace

std::vector<DetectionCandidate> extract_candidates(const Tensor& prob_map, int threshold_steps) {
  if (threshold_steps < 1) throw Error("extract_candidates: threshold_steps must be >= 1");
  const Dims dm = dims_of(prob_map, "extract_candidates");
  auto pv = prob_map.values();
  for (double v : pv) {
    if (!(v >= -1e-9 && v <= 1.0 + 1e-9)) {
      throw NumericError("extract_candidates: probability outside [0,1]");
    }
  }

  const int64_t vol = dm.h * dm.w * dm.d;
  std::vector<uint8_t> occupied(static_cast<size_t>(vol), 0);
  std::vector<DetectionCandidate> out;

  for (int k = 0; k < threshold_steps; ++k) {
    const double t = static_cast<double>(threshold_steps - 1 - k) / threshold_steps;
    auto comps = connected_components(dm, [&](int64_t lin) { return pv[static_cast<size_t>(lin)] > t; });
    for (auto& comp : comps) {
      bool overlaps = false;
      for (int64_t lin : comp) {
        if (occupied[static_cast<size_t>(lin)]) {
          overlaps = true;
          break;
        }
      }
      if (overlaps) continue;
      DetectionCandidate cand;
      double conf = 0.0;
      for (int64_t lin : comp) conf = std::max(conf, pv[static_cast<size_t>(lin)]);
      for (int64_t lin : comp) occupied[static_cast<size_t>(lin)] = 1;
      cand.voxels = std::move(comp);
      cand.confidence = conf;
      out.push_back(std::move(cand));
    }
  }

  std::stable_sort(out.begin(), out.end(), [](const DetectionCandidate& a, const DetectionCandidate& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    return a.voxels.front() < b.voxels.front();
  });
  return out;
}

std::vector<GtLesion> gt_lesions_from_mask(const Tensor& mask, double voxel_volume_mm3) {
  const Dims dm = dims_of(mask, "gt_lesions_from_mask");
  auto mv = mask.values();
  auto comps = connected_components(dm, [&](int64_t lin) { return mv[static_cast<size_t>(lin)] != 0.0; });
  std::vector<GtLesion> out;
  out.reserve(comps.size());
  for (auto& comp : comps) {
    GtLesion l;
    l.volume_mm3 = static_cast<double>(comp.size()) * voxel_volume_mm3;
    l.voxels = std::move(comp);
    out.push_back(std::move(l));
  }
  return out;
}

double dsc(const Tensor& pred_binary, const Tensor& gt_binary) {
  if (pred_binary.shape() != gt_binary.shape()) {
    throw ShapeError("dsc: shape mismatch " + shape_str(pred_binary.shape()) + " vs " +
                     shape_str(gt_binary.shape()));
  }
  auto pv = pred_binary.values();
  auto gv = gt_binary.values();
  int64_t p = 0, g = 0, inter = 0;
  for (size_t i = 0; i < pv.size(); ++i) {
    const bool bp = pv[i] != 0.0;
    const bool bg = gv[i] != 0.0;
    p += bp;
    g += bg;
    inter += bp && bg;
  }
  if (p + g == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(p + g);
}

double auc_roc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size() || scores.empty()) {
    throw ShapeError("auc_roc: scores and labels must be non-empty and aligned");
  }
  int64_t n_pos = 0, n_neg = 0;
  for (int l : labels) (l ? n_pos : n_neg) += 1;
  if (n_pos == 0 || n_neg == 0) throw Error("auc_roc: both classes must be present");

  // Midrank-based Mann-Whitney U.
  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(scores.size(), 0.0);
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double mid = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (size_t k = i; k <= j; ++k) rank[order[k]] = mid;
    i = j + 1;
  }
  double pos_rank_sum = 0.0;
  for (size_t k = 0; k < scores.size(); ++k) {
    if (labels[k]) pos_rank_sum += rank[k];
  }
  const double u = pos_rank_sum - static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

MatchingResult greedy_match(const std::vector<CaseDetections>& cases, double iou_min) {
  MatchingResult res;
  res.n_cases = static_cast<int>(cases.size());
  for (const auto& c : cases) res.total_gt += static_cast<int64_t>(c.gt.size());

  for (int ci = 0; ci < static_cast<int>(cases.size()); ++ci) {
    for (int k = 0; k < static_cast<int>(cases[static_cast<size_t>(ci)].candidates.size()); ++k) {
      res.ranked.push_back(
          {ci, k, cases[static_cast<size_t>(ci)].candidates[static_cast<size_t>(k)].confidence,
           false, -1, 0.0});
    }
  }
  std::stable_sort(res.ranked.begin(), res.ranked.end(),
                   [](const RankedCandidate& a, const RankedCandidate& b) {
                     if (a.confidence != b.confidence) return a.confidence > b.confidence;
                     if (a.case_index != b.case_index) return a.case_index < b.case_index;
                     return a.cand_index < b.cand_index;
                   });

  std::vector<std::vector<uint8_t>> gt_taken(cases.size());
  for (size_t ci = 0; ci < cases.size(); ++ci) gt_taken[ci].assign(cases[ci].gt.size(), 0);

  for (RankedCandidate& rc : res.ranked) {
    const auto& cd = cases[static_cast<size_t>(rc.case_index)];
    const auto& cand = cd.candidates[static_cast<size_t>(rc.cand_index)];
    double best_iou = 0.0;
    int best_gt = -1;
    for (int gi = 0; gi < static_cast<int>(cd.gt.size()); ++gi) {
      if (gt_taken[static_cast<size_t>(rc.case_index)][static_cast<size_t>(gi)]) continue;
      const double v = iou_sorted(cand.voxels, cd.gt[static_cast<size_t>(gi)].voxels);
      if (v >= iou_min && v > best_iou) {
        best_iou = v;
        best_gt = gi;
      }
    }
    if (best_gt >= 0) {
      rc.is_tp = true;
      rc.matched_gt = best_gt;
      rc.iou = best_iou;
      gt_taken[static_cast<size_t>(rc.case_index)][static_cast<size_t>(best_gt)] = 1;
    }
  }
  return res;
}

double average_precision(const MatchingResult& match, std::vector<PrPoint>* curve) {
  if (curve) curve->clear();
  if (match.total_gt == 0 || match.ranked.empty()) return 0.0;

  std::vector<double> precision, recall;
  int64_t tp = 0, fp = 0;
  for (const RankedCandidate& rc : match.ranked) {
    (rc.is_tp ? tp : fp) += 1;
    precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(match.total_gt));
    if (curve) curve->push_back({rc.confidence, precision.back(), recall.back()});
  }

  // Precision envelope, integrated over recall increments.
  std::vector<double> envelope(precision.size());
  double run = 0.0;
  for (size_t i = precision.size(); i-- > 0;) {
    run = std::max(run, precision[i]);
    envelope[i] = run;
  }
  double ap = 0.0;
  double prev_recall = 0.0;
  for (size_t i = 0; i < precision.size(); ++i) {
    if (recall[i] > prev_recall) {
      ap += (recall[i] - prev_recall) * envelope[i];
      prev_recall = recall[i];
    }
  }
  return ap;
}

double sensitivity_at_fp(const MatchingResult& match, double fp_per_case,
                         std::vector<FrocPoint>* curve) {
  if (curve) curve->clear();
  if (match.ranked.empty() || match.n_cases == 0) return 0.0;

  std::vector<double> thresholds;
  for (const RankedCandidate& rc : match.ranked) thresholds.push_back(rc.confidence);
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  double best_feasible = -1.0;
  double at_strictest = 0.0;
  for (size_t ti = 0; ti < thresholds.size(); ++ti) {
    const double th = thresholds[ti];
    int64_t tp = 0, fp = 0;
    for (const RankedCandidate& rc : match.ranked) {
      if (rc.confidence < th) break;  // ranked is confidence-descending
      (rc.is_tp ? tp : fp) += 1;
    }
    const double sens =
        match.total_gt > 0 ? static_cast<double>(tp) / static_cast<double>(match.total_gt) : 0.0;
    const double mean_fp = static_cast<double>(fp) / static_cast<double>(match.n_cases);
    if (curve) curve->push_back({th, mean_fp, sens});
    if (ti == 0) at_strictest = sens;
    if (mean_fp <= fp_per_case) best_feasible = std::max(best_feasible, sens);
  }
  return best_feasible >= 0.0 ? best_feasible : at_strictest;
}

double percentile_nearest_rank(std::vector<double> values, double pct) {
  if (values.empty()) throw Error("percentile: empty value set");
  std::sort(values.begin(), values.end());
  const auto n = static_cast<double>(values.size());
  int64_t rank = static_cast<int64_t>(std::ceil(pct / 100.0 * n));
  rank = std::max<int64_t>(1, std::min<int64_t>(rank, static_cast<int64_t>(values.size())));
  return values[static_cast<size_t>(rank - 1)];
}

SizeThresholds size_thresholds(const std::vector<double>& volumes_mm3, SizeMode mode,
                               double fixed_small, double fixed_large) {
  if (mode == SizeMode::kFixed) return {fixed_small, fixed_large};
  if (volumes_mm3.empty()) throw Error("size_thresholds: empty lesion set in percentile mode");
  return {percentile_nearest_rank(volumes_mm3, 33.0), percentile_nearest_rank(volumes_mm3, 66.0)};
}

int size_class_of(double volume_mm3, const SizeThresholds& t) {
  if (volume_mm3 < t.small_max) return 0;
  if (volume_mm3 <= t.large_min) return 1;
  return 2;
}

namespace {

struct PerCase {
  std::vector<DetectionCandidate> candidates;
  std::vector<GtLesion> gt;
  double dsc = 0.0;
  double patient_score = 0.0;
};

GroupMetrics group_metrics(const std::vector<PerCase>& per_case,
                           const std::vector<EvalCaseInput>& inputs, const EvalOptions& opts,
                           const SizeThresholds& thresholds, int cls) {
  GroupMetrics gm;
  std::vector<CaseDetections> restricted(per_case.size());
  double dsc_sum = 0.0;
  for (size_t ci = 0; ci < per_case.size(); ++ci) {
    restricted[ci].candidates = per_case[ci].candidates;
    std::vector<int64_t> group_voxels;
    for (const GtLesion& l : per_case[ci].gt) {
      if (size_class_of(l.volume_mm3, thresholds) == cls) {
        restricted[ci].gt.push_back(l);
        group_voxels.insert(group_voxels.end(), l.voxels.begin(), l.voxels.end());
      }
    }
    gm.n_lesions += static_cast<int64_t>(restricted[ci].gt.size());
    if (!restricted[ci].gt.empty()) {
      // Group DSC: prediction unchanged, GT restricted to group lesions.
      Tensor group_mask = Tensor::zeros(inputs[ci].gt_mask.shape());
      auto mv = group_mask.values();
      for (int64_t lin : group_voxels) mv[static_cast<size_t>(lin)] = 1.0;
      Tensor pred_bin = Tensor::zeros(inputs[ci].prob_map.shape());
      auto pb = pred_bin.values();
      auto pv = inputs[ci].prob_map.values();
      for (size_t i = 0; i < pv.size(); ++i) pb[i] = pv[i] >= opts.binarize_threshold ? 1.0 : 0.0;
      dsc_sum += dsc(pred_bin, group_mask);
      gm.n_cases += 1;
    }
  }
  const MatchingResult gmatch = greedy_match(restricted, opts.iou_min);
  gm.ap = average_precision(gmatch);
  gm.sen_at_fp = sensitivity_at_fp(gmatch, opts.fp_per_case);
  gm.dsc = gm.n_cases > 0 ? dsc_sum / gm.n_cases : 0.0;
  return gm;
}

}  // namespace

EvalReport evaluate_cases(const std::vector<EvalCaseInput>& inputs, const EvalOptions& opts) {
  if (inputs.empty()) throw Error("evaluate_cases: no cases");
  EvalReport report;
  report.size_mode = opts.size_mode;

  std::vector<PerCase> per_case(inputs.size());
  run_parallel(static_cast<int64_t>(inputs.size()), opts.threads, [&](int64_t i) {
    const EvalCaseInput& in = inputs[static_cast<size_t>(i)];
    PerCase& pc = per_case[static_cast<size_t>(i)];
    pc.candidates = extract_candidates(in.prob_map, opts.threshold_steps);
    pc.gt = gt_lesions_from_mask(in.gt_mask, opts.voxel_volume_mm3);
    Tensor pred_bin = Tensor::zeros(in.prob_map.shape());
    auto pb = pred_bin.values();
    auto pv = in.prob_map.values();
    double score = 0.0;
    for (size_t k = 0; k < pv.size(); ++k) {
      pb[k] = pv[k] >= opts.binarize_threshold ? 1.0 : 0.0;
      score = std::max(score, pv[k]);
    }
    pc.dsc = dsc(pred_bin, in.gt_mask);
    pc.patient_score = score;
  });

  std::vector<CaseDetections> dets(inputs.size());
  for (size_t i = 0; i < inputs.size(); ++i) {
    dets[i].candidates = per_case[i].candidates;
    dets[i].gt = per_case[i].gt;
  }
  const MatchingResult match = greedy_match(dets, opts.iou_min);
  report.total_gt = match.total_gt;
  report.ap = average_precision(match, &report.pr_curve);
  report.sen_at_fp = sensitivity_at_fp(match, opts.fp_per_case, &report.froc_curve);

  report.cases.resize(inputs.size());
  for (size_t i = 0; i < inputs.size(); ++i) {
    CaseRow& row = report.cases[i];
    row.id = inputs[i].id;
    row.label = inputs[i].label;
    row.dsc = per_case[i].dsc;
    row.patient_score = per_case[i].patient_score;
    row.candidates.resize(per_case[i].candidates.size());
    for (size_t k = 0; k < per_case[i].candidates.size(); ++k) {
      row.candidates[k].confidence = per_case[i].candidates[k].confidence;
      row.candidates[k].n_voxels = static_cast<int64_t>(per_case[i].candidates[k].voxels.size());
    }
  }
  for (const RankedCandidate& rc : match.ranked) {
    CaseRow& row = report.cases[static_cast<size_t>(rc.case_index)];
    if (rc.is_tp) {
      row.tp += 1;
      row.candidates[static_cast<size_t>(rc.cand_index)].tp = true;
      row.candidates[static_cast<size_t>(rc.cand_index)].iou = rc.iou;
    } else {
      row.fp += 1;
    }
  }
  double dsc_sum = 0.0;
  for (size_t i = 0; i < inputs.size(); ++i) {
    report.cases[i].fn = static_cast<int>(per_case[i].gt.size()) - report.cases[i].tp;
    dsc_sum += report.cases[i].dsc;
  }
  report.mean_dsc = dsc_sum / static_cast<double>(inputs.size());

  std::vector<double> scores;
  std::vector<int> labels;
  bool has_pos = false, has_neg = false;
  for (size_t i = 0; i < inputs.size(); ++i) {
    scores.push_back(per_case[i].patient_score);
    labels.push_back(inputs[i].label ? 1 : 0);
    (inputs[i].label ? has_pos : has_neg) = true;
  }
  if (has_pos && has_neg) {
    report.has_auc = true;
    report.auc = auc_roc(scores, labels);
  }

  std::vector<double> volumes;
  for (const PerCase& pc : per_case) {
    for (const GtLesion& l : pc.gt) volumes.push_back(l.volume_mm3);
  }
  if (!volumes.empty()) {
    report.thresholds =
        size_thresholds(volumes, opts.size_mode, opts.fixed_small, opts.fixed_large);
    for (int cls = 0; cls < 3; ++cls) {
      report.groups[static_cast<size_t>(cls)] =
          group_metrics(per_case, inputs, opts, report.thresholds, cls);
    }
  } else {
    report.thresholds = {opts.fixed_small, opts.fixed_large};
  }
  return report;
}

namespace {

json provenance_json(const std::string& config_echo_json, uint64_t seed) {
  json j;
  j["tool"] = {{"name", kToolName}, {"version", kToolVersion}};
  j["seed"] = seed;
  if (!config_echo_json.empty()) j["config"] = json::parse(config_echo_json);
  return j;
}

std::string csv_provenance_header(const std::string& config_echo_json, uint64_t seed) {
  std::ostringstream os;
  os << "# tool: " << kToolName << " " << kToolVersion << "\n";
  os << "# seed: " << seed << "\n";
  if (!config_echo_json.empty()) os << "# config: " << config_echo_json << "\n";
  return os.str();
}

}  // namespace

std::string EvalReport::to_json(const std::string& config_echo_json, uint64_t seed) const {
  json j = provenance_json(config_echo_json, seed);
  json case_rows = json::array();
  for (const CaseRow& row : cases) {
    json cands = json::array();
    for (const CandidateRow& c : row.candidates) {
      cands.push_back({{"confidence", c.confidence},
                       {"voxels", c.n_voxels},
                       {"tp", c.tp},
                       {"iou", c.iou}});
    }
    case_rows.push_back({{"id", row.id},
                         {"label", row.label},
                         {"dsc", row.dsc},
                         {"patient_score", row.patient_score},
                         {"tp", row.tp},
                         {"fp", row.fp},
                         {"fn", row.fn},
                         {"candidates", cands}});
  }
  j["cases"] = case_rows;

  json agg;
  agg["mean_dsc"] = mean_dsc;
  agg["ap"] = ap;
  agg["auc_roc"] = has_auc ? json(auc) : json(nullptr);
  agg["sen_at_1fp"] = sen_at_fp;
  agg["total_gt_lesions"] = total_gt;
  json by_size;
  by_size["mode"] = size_mode == SizeMode::kFixed ? "fixed" : "percentile";
  by_size["thresholds_mm3"] = {thresholds.small_max, thresholds.large_min};
  const char* names[3] = {"small", "medium", "large"};
  for (int cls = 0; cls < 3; ++cls) {
    const GroupMetrics& gm = groups[static_cast<size_t>(cls)];
    by_size[names[cls]] = {{"n_lesions", gm.n_lesions},
                           {"n_cases", gm.n_cases},
                           {"dsc", gm.dsc},
                           {"ap", gm.ap},
                           {"sen_at_1fp", gm.sen_at_fp}};
  }
  agg["by_size"] = by_size;
  j["aggregate"] = agg;
  return j.dump(2);
}

std::string EvalReport::pr_csv(const std::string& config_echo_json, uint64_t seed) const {
  std::ostringstream os;
  os << csv_provenance_header(config_echo_json, seed);
  os << "threshold,precision,recall\n";
  os.precision(17);
  for (const PrPoint& p : pr_curve) {
    os << p.threshold << "," << p.precision << "," << p.recall << "\n";
  }
  return os.str();
}

std::string EvalReport::froc_csv(const std::string& config_echo_json, uint64_t seed) const {
  std::ostringstream os;
  os << csv_provenance_header(config_echo_json, seed);
  os << "threshold,mean_fp,sensitivity\n";
  os.precision(17);
  for (const FrocPoint& p : froc_curve) {
    os << p.threshold << "," << p.mean_fp << "," << p.sensitivity << "\n";
  }
  return os.str();
}

}  // namespace spda::eval
