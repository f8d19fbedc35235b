#pragma once

#include <optional>
#include <string>
#include <vector>

#include "spda/attention.hpp"
#include "spda/optim.hpp"
#include "spda/params.hpp"

namespace spda {

struct UNetConfig {
  int levels = 3;
  std::vector<int> channels = {8, 16, 32};
  int in_channels = 3;
  int out_channels = 1;
  AttentionConfig attention;

  void validate() const;
};

// with_bias is off for convolutions that feed a batch norm: the mean
// subtraction makes such a bias a dead parameter.
struct Conv3dLayer {
  std::string name;
  Tensor weight, bias;
  bool has_bias = true;
  Conv3dLayer() = default;
  Conv3dLayer(int cin, int cout, int ksize, uint64_t master_seed, std::string prefix,
              bool with_bias = true);
  Tensor forward(const Tensor& x) const { return ops::conv3d(x, weight, bias); }
  void collect_params(std::vector<Param>& out) const;
};

struct BatchNorm3dLayer {
  std::string name;
  Tensor gamma, beta, running_mean, running_var;
  double momentum = 0.1;
  double eps = 1e-5;
  BatchNorm3dLayer() = default;
  BatchNorm3dLayer(int channels, std::string prefix);
  Tensor forward(const Tensor& x, bool train);
  void collect_params(std::vector<Param>& out) const;
};

// Two (conv3x3x3 -> batch norm -> ReLU) stages.
struct ConvBlock {
  Conv3dLayer conv1, conv2;
  BatchNorm3dLayer bn1, bn2;
  ConvBlock() = default;
  ConvBlock(int cin, int cout, uint64_t master_seed, const std::string& prefix);
  Tensor forward(const Tensor& x, bool train);
  void collect_params(std::vector<Param>& out) const;
};

// Encoder-decoder segmentation network. The decoder upsamples with
// nearest-neighbor, reduces channels with a 1x1x1 convolution (which is also
// the gating signal fed to the attention head), concatenates the
// recalibrated skip, and applies a conv block. Output is a per-voxel
// probability via a final 1x1x1 convolution and sigmoid.
class SegModel {
 public:
  SegModel(UNetConfig cfg, uint64_t seed);

  // volume: [B, in_channels, H, W, D]; H, W, D divisible by 2^(levels-1).
  Tensor forward(const Tensor& volume, bool train = false);

  // Single case [in_channels,H,W,D] -> probability map [H,W,D]; eval mode,
  // no recording.
  Tensor predict(const Tensor& volume);

  std::vector<Param> params() const;           // declaration order, buffers included
  std::vector<Param> trainable_params() const; // buffers excluded
  void zero_grad();

  const UNetConfig& config() const { return cfg_; }
  uint64_t seed() const { return seed_; }

  // Test hook: skip the heads so the forward pass reduces bitwise to the
  // attention-free network (alpha == 1).
  bool force_alpha_one = false;
  SpdObserver* spd_observer = nullptr;

  void save_checkpoint(const std::string& path, int epoch,
                       const std::string& config_echo_json) const;
  static SegModel load_checkpoint(const std::string& path, int* epoch_out = nullptr,
                                  std::string* config_echo_out = nullptr);

 private:
  UNetConfig cfg_;
  uint64_t seed_ = 0;
  std::vector<ConvBlock> encoder_;
  ConvBlock bottleneck_;
  std::vector<Conv3dLayer> reduce_;
  std::vector<AttentionHead> heads_;
  std::vector<ConvBlock> decoder_;
  Conv3dLayer final_;
};

// (1 - (2*sum(p*t) + s) / (sum(p) + sum(t) + s)) + mean BCE, smoothing s = 1,
// predictions clamped to [1e-7, 1 - 1e-7] inside the BCE and Dice terms.
// dice_out / bce_out, when non-null, receive the two component values.
Tensor dice_bce_loss(const Tensor& pred, const Tensor& target, double* dice_out = nullptr,
                     double* bce_out = nullptr);

struct Sample {
  Tensor volume;  // [C,H,W,D]
  Tensor mask;    // [H,W,D], binary
};

struct TrainOptions {
  double rmsprop_lr = 1e-4;
  double rmsprop_alpha = 0.99;
  double rmsprop_eps = 1e-8;
  double stiefel_lr = 0.1;
  int batch_size = 2;
};

struct EpochStats {
  double mean_loss = 0.0;
  double mean_grad_norm = 0.0;
  double max_stiefel_residual = 0.0;
  int steps = 0;
};

// Owns the optimizer state for one model. One train_epoch call makes a full
// seeded-shuffle pass over the dataset.
class Trainer {
 public:
  Trainer(SegModel& model, const TrainOptions& opts);
  EpochStats train_epoch(const std::vector<Sample>& data, uint64_t epoch_seed);
  const TrainOptions& options() const { return opts_; }

 private:
  SegModel& model_;
  TrainOptions opts_;
  std::vector<Param> trainables_;
  std::vector<optim::RmspropState> rmsprop_states_;
};

}  // namespace spda
