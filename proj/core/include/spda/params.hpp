#pragma once

#include <string>
#include <vector>

#include "spda/tensor.hpp"

namespace spda {

// Stiefel parameters are updated by optim::stiefel_step, Euclidean ones by
// RMSprop. Buffers (batch-norm running statistics) are serialized but never
// optimized and carry no gradient.
enum class ParamKind { kEuclidean, kStiefel, kBuffer };

struct Param {
  std::string name;
  Tensor tensor;
  ParamKind kind = ParamKind::kEuclidean;
};

// Uniform in +/- sqrt(1 / fan_in), seeded per parameter name.
Tensor init_fan_in_uniform(Shape shape, int64_t fan_in, uint64_t master_seed,
                           const std::string& name);

}  // namespace spda
