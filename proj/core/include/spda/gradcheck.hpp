#pragma once

#include <functional>
#include <string>
#include <vector>

#include "spda/tensor.hpp"

namespace spda::gradcheck {

// One differentiable computation under test: forward() rebuilds the scalar
// loss from the captured leaves on every call (finite differences re-run it
// with perturbed leaf values, so the check never touches the backward path
// it verifies).
struct CheckCase {
  std::string name;
  std::vector<Tensor> leaves;
  std::function<Tensor()> forward;
};

struct CheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  double tolerance = 1e-4;
  bool pass = false;
};

struct Report {
  std::vector<CheckEntry> entries;
  bool all_pass = false;
  int seeds = 0;
  double elapsed_seconds = 0.0;
};

// Central differences with step h; relative error uses the denominator
// max(|analytic|, |numeric|, 1e-8). invert_analytic negates the backward
// result before comparing (negative-control path).
double max_rel_err(CheckCase& check, double h = 1e-5);
double max_rel_err(CheckCase& check, double h, bool invert_analytic);

// The full battery over every operation and head composition. Each op is
// checked once per seed; entries report the max error across seeds.
// inject_wrong_sign, when non-empty, flips the analytic gradient sign for
// the named op (negative control: the harness must report the failure).
Report run(uint64_t base_seed, int n_seeds, const std::string& inject_wrong_sign = "",
           double tolerance = 1e-4);

std::vector<std::string> op_names();

}  // namespace spda::gradcheck
