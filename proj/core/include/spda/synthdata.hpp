#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "spda/tensor.hpp"

namespace spda::synth {

struct LesionRecord {
  std::array<double, 3> centroid;   // voxel coordinates (z, y, x order of H,W,D)
  std::array<double, 3> radius;     // half-max semi-axes in voxels
  int64_t volume_voxels = 0;
  int size_class = 0;               // 0 small, 1 medium, 2 large (generator class)
};

struct SynthCase {
  std::string id;
  std::array<int64_t, 3> shape{};   // H, W, D
  Tensor volume;                    // [3, H, W, D], z-score normalized per channel
  Tensor mask;                      // [H, W, D], binary
  std::vector<LesionRecord> lesions;
  bool has_lesion = false;
  uint64_t seed = 0;
};

struct SynthParams {
  int n_cases = 64;
  double prevalence = 0.65;
  std::array<double, 3> size_mix = {0.4, 0.35, 0.25};  // small, medium, large
  std::array<int64_t, 3> shape = {16, 16, 16};
  double voxel_volume_mm3 = 0.75;

  void validate() const;
};

// Per-channel (x - mean) / std over a [C, ...] tensor; a channel with
// std < 1e-12 is set to zero.
Tensor zscore_normalize(const Tensor& volume);

// Deterministic: per-case seeds come from a SplitMix64 stream over the
// master seed (seed_i = splitmix64 advanced i+1 times from master), so cases
// can be generated independently and in parallel.
std::vector<SynthCase> generate_dataset(const SynthParams& params, uint64_t master_seed);
SynthCase generate_case(const SynthParams& params, uint64_t case_seed, const std::string& id);

// One case per file:
//   "SPDA" | u16 version | u32 header_len | JSON header |
//   volume f64 LE | mask bit-packed LSB-first | u32 CRC32 of the payload
void save_case(const SynthCase& c, const std::string& path);
SynthCase load_case(const std::string& path);

// Directory layout: <dir>/manifest.json + <dir>/cases/case_%05d.spda.
void write_dataset(const std::vector<SynthCase>& cases, const SynthParams& params,
                   uint64_t master_seed, const std::string& dir,
                   const std::string& config_echo_json);

// Loads every cases/*.spda in lexicographic filename order.
std::vector<SynthCase> load_dataset(const std::string& dir);

// Raw manifest text (for provenance checks); throws IoError if missing.
std::string read_manifest(const std::string& dir);

uint32_t crc32(const uint8_t* data, size_t len);

}  // namespace spda::synth
