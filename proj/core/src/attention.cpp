#include "spda/attention.hpp"

#include <algorithm>
#include <cmath>

namespace spda {

AttentionVariant attention_variant_from_string(const std::string& name) {
  if (name == "none") return AttentionVariant::kNone;
  if (name == "foa") return AttentionVariant::kFoa;
  if (name == "soa") return AttentionVariant::kSoa;
  if (name == "soga") return AttentionVariant::kSoga;
  throw ConfigError("unknown attention variant '" + name + "' (expected none|foa|soa|soga)");
}

std::string to_string(AttentionVariant v) {
  switch (v) {
    case AttentionVariant::kNone: return "none";
    case AttentionVariant::kFoa: return "foa";
    case AttentionVariant::kSoa: return "soa";
    case AttentionVariant::kSoga: return "soga";
  }
  throw Error("unreachable");
}

void SpdObserver::observe(const Tensor& spd_batch) {
  lambda_mins.push_back(spd_min_eigenvalue(spd_batch));
}

double SpdObserver::min() const {
  double lo = std::numeric_limits<double>::infinity();
  for (double v : lambda_mins) lo = std::min(lo, v);
  return lo;
}

Tensor init_fan_in_uniform(Shape shape, int64_t fan_in, uint64_t master_seed,
                           const std::string& name) {
  Rng rng(derive_seed(master_seed, name));
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  return Tensor::uniform(std::move(shape), rng, -bound, bound, /*requires_grad=*/true);
}

namespace {

int branch_embedding_length(AttentionVariant v, int c) {
  switch (v) {
    case AttentionVariant::kFoa: return c;
    case AttentionVariant::kSoa: return c * (c + 1) / 2;
    case AttentionVariant::kSoga: {
      const int half = c / 2;
      return half * (half + 1) / 2;
    }
    default: throw ConfigError("attention head cannot be built for variant 'none'");
  }
}

}  // namespace

AttentionHead::AttentionHead(AttentionVariant variant, int channels, const AttentionConfig& cfg,
                             uint64_t master_seed, const std::string& name_prefix)
    : variant_(variant), channels_(channels), cfg_(cfg), prefix_(name_prefix) {
  if (variant == AttentionVariant::kNone) {
    throw ConfigError("attention head cannot be built for variant 'none'");
  }
  if (channels % cfg.reduction_ratio != 0) {
    throw ConfigError("attention: reduction ratio " + std::to_string(cfg.reduction_ratio) +
                      " must divide channel count " + std::to_string(channels));
  }
  if ((variant == AttentionVariant::kSoa || variant == AttentionVariant::kSoga) &&
      channels % 2 != 0) {
    throw ConfigError("attention: SOA/SOGA require an even channel count, got " +
                      std::to_string(channels));
  }

  embed_len_ = 2 * branch_embedding_length(variant, channels);
  const int hidden = channels / cfg.reduction_ratio;

  if (variant == AttentionVariant::kSoga) {
    enc_bire_ = BiReBlock(channels, cfg.epsilon, derive_seed(master_seed, prefix_ + ".enc.bimap.weight"));
    dec_bire_ = BiReBlock(channels, cfg.epsilon, derive_seed(master_seed, prefix_ + ".dec.bimap.weight"));
  }
  fc1_weight_ = init_fan_in_uniform({hidden, embed_len_}, embed_len_, master_seed,
                                    prefix_ + ".fc1.weight");
  fc1_bias_ = Tensor::zeros({hidden}, /*requires_grad=*/true);
  fc2_weight_ =
      init_fan_in_uniform({channels, hidden}, hidden, master_seed, prefix_ + ".fc2.weight");
  fc2_bias_ = Tensor::zeros({channels}, /*requires_grad=*/true);
}

Tensor AttentionHead::branch_embedding(const Tensor& f, bool decoder_branch) const {
  switch (variant_) {
    case AttentionVariant::kFoa:
      return ops::gap3d(f);
    case AttentionVariant::kSoa:
      return ops::upper_triangle_vec(ops::spd_pool(f), cfg_.isometric_vec);
    case AttentionVariant::kSoga: {
      const BiReBlock& bire = decoder_branch ? dec_bire_ : enc_bire_;
      Tensor rectified = bire.forward(ops::spd_pool(f));
      if (observer) observer->observe(rectified);
      return ops::upper_triangle_vec(ops::logeig(rectified), cfg_.isometric_vec);
    }
    default:
      throw Error("unreachable");
  }
}

std::pair<Tensor, Tensor> AttentionHead::forward(const Tensor& f_e, const Tensor& f_d) const {
  if (f_e.shape() != f_d.shape()) {
    throw ShapeError("attention: encoder features " + shape_str(f_e.shape()) +
                     " vs decoder features " + shape_str(f_d.shape()));
  }
  if (f_e.rank() != 5 || f_e.dim(1) != channels_) {
    throw ShapeError("attention: expected [B," + std::to_string(channels_) + ",H,W,D], got " +
                     shape_str(f_e.shape()));
  }

  Tensor embed = ops::concat({branch_embedding(f_e, false), branch_embedding(f_d, true)}, 1);
  Tensor hidden = ops::linear(embed, fc1_weight_, fc1_bias_);
  if (cfg_.inner_relu) hidden = ops::relu(hidden);
  Tensor alpha = ops::sigmoid(ops::linear(hidden, fc2_weight_, fc2_bias_));
  Tensor recalibrated = ops::channel_scale(f_e, alpha);
  return {recalibrated, alpha};
}

void AttentionHead::collect_params(std::vector<Param>& out) const {
  if (variant_ == AttentionVariant::kSoga) {
    out.push_back({prefix_ + ".enc.bimap.weight", enc_bire_.weight, ParamKind::kStiefel});
    out.push_back({prefix_ + ".dec.bimap.weight", dec_bire_.weight, ParamKind::kStiefel});
  }
  out.push_back({prefix_ + ".fc1.weight", fc1_weight_, ParamKind::kEuclidean});
  out.push_back({prefix_ + ".fc1.bias", fc1_bias_, ParamKind::kEuclidean});
  out.push_back({prefix_ + ".fc2.weight", fc2_weight_, ParamKind::kEuclidean});
  out.push_back({prefix_ + ".fc2.bias", fc2_bias_, ParamKind::kEuclidean});
}

}  // namespace spda
