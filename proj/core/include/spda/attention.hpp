#pragma once

#include <string>
#include <utility>
#include <vector>

#include "spda/params.hpp"
#include "spda/spd_layers.hpp"

namespace spda {

enum class AttentionVariant { kNone, kFoa, kSoa, kSoga };

AttentionVariant attention_variant_from_string(const std::string& name);
std::string to_string(AttentionVariant v);

struct AttentionConfig {
  AttentionVariant variant = AttentionVariant::kNone;
  int reduction_ratio = 4;
  double epsilon = 1e-4;    // ReEig rectification threshold
  bool inner_relu = true;   // ReLU between the two FC layers (off in strict mode)
  bool isometric_vec = true;  // sqrt(2) off-diagonal scaling in the triangle vec
};

// Collects the smallest eigenvalue of every post-ReEig descriptor seen
// during a forward pass. Debug instrumentation only; never on the gradient
// path.
struct SpdObserver {
  std::vector<double> lambda_mins;
  void observe(const Tensor& spd_batch);
  double min() const;
};

// One skip-connection recalibration head. All variants share the contract
//   e = [embed(F_e), embed(F_d)]
//   alpha = sigmoid(fc2(relu?(fc1(e))))
//   F_hat = F_e (.) alpha   (per-channel scaling)
// and differ only in the embedding:
//   FOA   global average pooling            -> length C per branch
//   SOA   triangle vec of the raw Gram      -> C(C+1)/2 per branch
//   SOGA  BiRe + LogEig + triangle vec      -> (C/2)(C/2+1)/2 per branch,
//         with an independent Stiefel-constrained BiMap per branch.
class AttentionHead {
 public:
  AttentionHead(AttentionVariant variant, int channels, const AttentionConfig& cfg,
                uint64_t master_seed, const std::string& name_prefix);

  // F_e, F_d: [B,C,H,W,D] with identical shapes. Returns (F_hat, alpha).
  std::pair<Tensor, Tensor> forward(const Tensor& f_e, const Tensor& f_d) const;

  // The per-branch embedding (exposed for tests).
  Tensor branch_embedding(const Tensor& f, bool decoder_branch) const;

  void collect_params(std::vector<Param>& out) const;

  int channels() const { return channels_; }
  int embedding_length() const { return embed_len_; }
  AttentionVariant variant() const { return variant_; }

  SpdObserver* observer = nullptr;

 private:
  AttentionVariant variant_;
  int channels_ = 0;
  int embed_len_ = 0;  // length of the concatenated embedding
  AttentionConfig cfg_;
  std::string prefix_;

  BiReBlock enc_bire_;
  BiReBlock dec_bire_;
  Tensor fc1_weight_, fc1_bias_;
  Tensor fc2_weight_, fc2_bias_;
};

}  // namespace spda
