#pragma once

#include <bit>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace spda {

inline constexpr std::string_view kToolName = "spda";
inline constexpr std::string_view kToolVersion = "0.1.0";

static_assert(std::endian::native == std::endian::little,
              "on-disk formats are little-endian; big-endian hosts are unsupported");

// Error taxonomy. The CLI maps ConfigError to exit code 1, everything else to 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// SplitMix64 step; advances the state and returns the next value.
uint64_t splitmix64(uint64_t& state);

uint64_t fnv1a64(std::string_view s);

// Seed for a named substream (parameter init, per-case generation).
// Independent of declaration order so adding a parameter elsewhere does not
// shift any other stream.
uint64_t derive_seed(uint64_t master, std::string_view tag);
uint64_t derive_seed(uint64_t master, uint64_t index);

// Deterministic RNG over a SplitMix64 stream. Uniforms take the top 53 bits;
// normals come from Box-Muller. Same seed, same sequence, on any IEEE host.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() { return splitmix64(state_); }

  // [0, 1)
  double uniform();
  double uniform(double lo, double hi);
  // inclusive bounds
  int64_t uniform_int(int64_t lo, int64_t hi);
  double normal();
  double normal(double mean, double stddev);

 private:
  uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace spda
