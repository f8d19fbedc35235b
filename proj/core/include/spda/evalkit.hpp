#pragma once

#include <array>
#include <string>
#include <vector>

#include "spda/tensor.hpp"

namespace spda::eval {

struct DetectionCandidate {
  std::vector<int64_t> voxels;  // sorted linear indices, one 26-connected component
  double confidence = 0.0;      // max probability inside the component
};

// Descending-threshold component extraction: for t in {(s-1)/s, ..., 1/s, 0}
// (s = threshold_steps), each 26-connected component of {p > t} that does
// not overlap a previously emitted candidate becomes a candidate with
// confidence = max p inside it. Result ordered by (confidence desc, lowest
// linear index).
std::vector<DetectionCandidate> extract_candidates(const Tensor& prob_map,
                                                   int threshold_steps = 20);

struct GtLesion {
  std::vector<int64_t> voxels;  // sorted linear indices
  double volume_mm3 = 0.0;
};

// 26-connected components of a binary mask.
std::vector<GtLesion> gt_lesions_from_mask(const Tensor& mask, double voxel_volume_mm3);

// 2|P ∩ G| / (|P| + |G|); 1.0 when both masks are empty.
double dsc(const Tensor& pred_binary, const Tensor& gt_binary);

// Mann-Whitney normalization with midrank tie handling:
// P(score+ > score-) + P(tie)/2. Throws when only one class is present.
double auc_roc(const std::vector<double>& scores, const std::vector<int>& labels);

struct CaseDetections {
  std::vector<DetectionCandidate> candidates;
  std::vector<GtLesion> gt;
};

struct RankedCandidate {
  int case_index = 0;
  int cand_index = 0;
  double confidence = 0.0;
  bool is_tp = false;
  int matched_gt = -1;
  double iou = 0.0;
};

struct MatchingResult {
  std::vector<RankedCandidate> ranked;  // confidence desc, then case, then index
  int64_t total_gt = 0;
  int n_cases = 0;
};

// Greedy one-to-one matching in global rank order: each candidate takes the
// highest-IoU still-unmatched lesion of its case with IoU >= iou_min.
MatchingResult greedy_match(const std::vector<CaseDetections>& cases, double iou_min);

struct PrPoint {
  double threshold, precision, recall;
};

// Area under the precision-recall curve with the all-points interpolation
// (precision envelope). 0 when there are no ground-truth lesions.
double average_precision(const MatchingResult& match, std::vector<PrPoint>* curve = nullptr);

struct FrocPoint {
  double threshold, mean_fp, sensitivity;
};

// FROC over the distinct confidence values; reports the sensitivity at the
// operating point with the most recall among thresholds whose mean FP/case
// stays within the budget, falling back to the strictest threshold when
// none qualifies.
double sensitivity_at_fp(const MatchingResult& match, double fp_per_case,
                         std::vector<FrocPoint>* curve = nullptr);

enum class SizeMode { kFixed, kPercentile };

struct SizeThresholds {
  double small_max = 931.0;   // v <  small_max           -> small
  double large_min = 2337.0;  // small_max <= v <= large_min -> medium, above -> large
};

double percentile_nearest_rank(std::vector<double> values, double pct);
SizeThresholds size_thresholds(const std::vector<double>& volumes_mm3, SizeMode mode,
                               double fixed_small = 931.0, double fixed_large = 2337.0);
int size_class_of(double volume_mm3, const SizeThresholds& t);

struct EvalCaseInput {
  std::string id;
  Tensor prob_map;  // [H,W,D] in [0,1]
  Tensor gt_mask;   // [H,W,D] binary
  bool label = false;
};

struct EvalOptions {
  int threshold_steps = 20;
  double iou_min = 0.1;
  double fp_per_case = 1.0;
  SizeMode size_mode = SizeMode::kPercentile;
  double fixed_small = 931.0;
  double fixed_large = 2337.0;
  double voxel_volume_mm3 = 0.75;
  double binarize_threshold = 0.5;
  int threads = 1;
};

struct CandidateRow {
  double confidence = 0.0;
  int64_t n_voxels = 0;
  bool tp = false;
  double iou = 0.0;
};

struct CaseRow {
  std::string id;
  bool label = false;
  double dsc = 0.0;
  double patient_score = 0.0;
  int tp = 0, fp = 0, fn = 0;
  std::vector<CandidateRow> candidates;
};

struct GroupMetrics {
  int64_t n_lesions = 0;
  int n_cases = 0;       // cases containing at least one group lesion
  double dsc = 0.0;      // mean over those cases, GT restricted to the group
  double ap = 0.0;
  double sen_at_fp = 0.0;
};

struct EvalReport {
  std::vector<CaseRow> cases;
  double mean_dsc = 0.0;
  double ap = 0.0;
  bool has_auc = false;
  double auc = 0.0;
  double sen_at_fp = 0.0;
  int64_t total_gt = 0;
  std::vector<PrPoint> pr_curve;
  std::vector<FrocPoint> froc_curve;
  SizeMode size_mode = SizeMode::kPercentile;
  SizeThresholds thresholds;
  std::array<GroupMetrics, 3> groups;

  std::string to_json(const std::string& config_echo_json, uint64_t seed) const;
  std::string pr_csv(const std::string& config_echo_json, uint64_t seed) const;
  std::string froc_csv(const std::string& config_echo_json, uint64_t seed) const;
};

// Full evaluation protocol over a set of cases. Case-level work may run on
// opts.threads threads; the aggregation is sequential and deterministic.
EvalReport evaluate_cases(const std::vector<EvalCaseInput>& inputs, const EvalOptions& opts);

}  // namespace spda::eval
