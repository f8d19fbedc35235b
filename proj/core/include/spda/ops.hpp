#pragma once

#include <vector>

#include "spda/tape.hpp"
#include "spda/tensor.hpp"

namespace spda::ops {

// 3D convolution, stride 1, odd kernel, same padding ((k-1)/2 zeros per side).
// input [B,Cin,H,W,D], kernel [Cout,Cin,k,k,k], bias [Cout] -> [B,Cout,H,W,D].
Tensor conv3d(const Tensor& input, const Tensor& kernel, const Tensor& bias);

// 2x2x2 window, stride 2. Backward routes the gradient to the first maximal
// element of each window (lowest linear index on ties).
Tensor maxpool3d(const Tensor& input);

// Each voxel replicated into a 2x2x2 block.
Tensor upsample_nearest3d(const Tensor& input);

// input [B,n], weight [m,n], bias [m] -> [B,m]
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor log(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& x, double c);
Tensor mul_scalar(const Tensor& x, double c);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor reshape(const Tensor& x, Shape shape);
// [B,m,k] x [B,k,n] -> [B,m,n]
Tensor batch_matmul(const Tensor& a, const Tensor& b);
Tensor reduce_sum(const Tensor& x);
Tensor reduce_mean(const Tensor& x);

// features [B,C,...], coeffs [B,C]: every element of channel (b,c) scaled by
// coeffs[b,c].
Tensor channel_scale(const Tensor& features, const Tensor& coeffs);

// Global average pool over the spatial dims: [B,C,H,W,D] -> [B,C].
Tensor gap3d(const Tensor& x);

// Batch norm over (B,H,W,D) per channel. Training mode normalizes by batch
// statistics (biased variance) and, when update_running is set, folds the
// unbiased batch variance into the running buffers in place. Eval mode
// normalizes by the running buffers.
Tensor batchnorm3d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   Tensor& running_mean, Tensor& running_var, double momentum, double eps,
                   bool train, bool update_running = true);

}  // namespace spda::ops

namespace spda::ops::detail {

// Shared op plumbing: result tensors require grad iff the tape is recording
// and any input does; recorded outputs get a zeroed grad buffer.
Tensor make_result(Shape shape, std::initializer_list<const Tensor*> inputs);
bool any_requires_grad(std::initializer_list<const Tensor*> inputs);

}  // namespace spda::ops::detail
