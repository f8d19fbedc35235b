#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "spda/common.hpp"

namespace spda {

// Resolved run configuration. Sources, in precedence order: built-in
// defaults < config file (flat INI sections, key = value) < command-line
// flags. The JSON echo is embedded verbatim in every output artifact.
struct RunConfig {
  // global
  uint64_t seed = 42;
  bool strict_paper = false;

  // [network]
  int levels = 3;
  std::vector<int> channels = {8, 16, 32};
  int in_channels = 3;
  int out_channels = 1;
  std::string attention = "none";
  int reduction_ratio = 4;
  double epsilon = 1e-4;
  bool inner_relu = true;
  bool isometric_vec = true;

  // [train]
  int epochs = 30;
  int batch_size = 2;
  double rmsprop_lr = 1e-4;
  double rmsprop_alpha = 0.99;
  double rmsprop_eps = 1e-8;
  double stiefel_lr = 0.1;

  // [synth]
  int cases = 64;
  double prevalence = 0.65;
  std::array<double, 3> size_mix = {0.4, 0.35, 0.25};
  std::array<int64_t, 3> shape = {16, 16, 16};
  double voxel_volume_mm3 = 0.75;

  // [eval]
  std::string size_mode = "percentile";  // or "fixed"
  int threshold_steps = 20;
  int threads = 0;  // 0 = hardware concurrency, capped by SPDA_THREADS

  // Throws ConfigError on unknown sections/keys or unparsable values.
  void load_ini(const std::string& path);
  void apply_key(const std::string& section_key, const std::string& value);

  // strict-paper mode: no sqrt(2) triangle scaling, no inner ReLU, fixed
  // mm^3 size thresholds.
  void apply_strict_paper();

  std::string to_json() const;

  int resolved_eval_threads() const;
};

}  // namespace spda
