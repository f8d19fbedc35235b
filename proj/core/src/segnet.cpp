#include "spda/segnet.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace spda {

void UNetConfig::validate() const {
  if (levels < 2) throw ConfigError("network: need at least 2 levels");
  if (static_cast<int>(channels.size()) != levels) {
    throw ConfigError("network: channels list must have one entry per level");
  }
  for (size_t i = 1; i < channels.size(); ++i) {
    if (channels[i] <= channels[i - 1]) {
      throw ConfigError("network: channels must be strictly increasing");
    }
  }
  if (in_channels < 1 || out_channels != 1) {
    throw ConfigError("network: in_channels >= 1 and out_channels == 1 required");
  }
  const bool second_order = attention.variant == AttentionVariant::kSoa ||
                            attention.variant == AttentionVariant::kSoga;
  for (int l = 0; l < levels - 1; ++l) {
    if (second_order && channels[static_cast<size_t>(l)] % 2 != 0) {
      throw ConfigError("network: SOA/SOGA need even channel counts at skip levels");
    }
    if (attention.variant != AttentionVariant::kNone &&
        channels[static_cast<size_t>(l)] % attention.reduction_ratio != 0) {
      throw ConfigError("network: reduction ratio must divide every skip-level channel count");
    }
  }
}

Conv3dLayer::Conv3dLayer(int cin, int cout, int ksize, uint64_t master_seed, std::string prefix,
                         bool with_bias)
    : name(std::move(prefix)), has_bias(with_bias) {
  const int64_t fan_in = static_cast<int64_t>(cin) * ksize * ksize * ksize;
  weight = init_fan_in_uniform({cout, cin, ksize, ksize, ksize}, fan_in, master_seed,
                               name + ".weight");
  bias = Tensor::zeros({cout}, /*requires_grad=*/has_bias);
}

void Conv3dLayer::collect_params(std::vector<Param>& out) const {
  out.push_back({name + ".weight", weight, ParamKind::kEuclidean});
  if (has_bias) out.push_back({name + ".bias", bias, ParamKind::kEuclidean});
}

BatchNorm3dLayer::BatchNorm3dLayer(int channels, std::string prefix) : name(std::move(prefix)) {
  gamma = Tensor::ones({channels});
  gamma.set_requires_grad(true);
  beta = Tensor::zeros({channels}, /*requires_grad=*/true);
  running_mean = Tensor::zeros({channels});
  running_var = Tensor::ones({channels});
}

Tensor BatchNorm3dLayer::forward(const Tensor& x, bool train) {
  return ops::batchnorm3d(x, gamma, beta, running_mean, running_var, momentum, eps, train);
}

void BatchNorm3dLayer::collect_params(std::vector<Param>& out) const {
  out.push_back({name + ".gamma", gamma, ParamKind::kEuclidean});
  out.push_back({name + ".beta", beta, ParamKind::kEuclidean});
  out.push_back({name + ".running_mean", running_mean, ParamKind::kBuffer});
  out.push_back({name + ".running_var", running_var, ParamKind::kBuffer});
}

ConvBlock::ConvBlock(int cin, int cout, uint64_t master_seed, const std::string& prefix)
    : conv1(cin, cout, 3, master_seed, prefix + ".conv1", /*with_bias=*/false),
      conv2(cout, cout, 3, master_seed, prefix + ".conv2", /*with_bias=*/false),
      bn1(cout, prefix + ".bn1"),
      bn2(cout, prefix + ".bn2") {}

Tensor ConvBlock::forward(const Tensor& x, bool train) {
  Tensor h = ops::relu(bn1.forward(conv1.forward(x), train));
  return ops::relu(bn2.forward(conv2.forward(h), train));
}

void ConvBlock::collect_params(std::vector<Param>& out) const {
  conv1.collect_params(out);
  bn1.collect_params(out);
  conv2.collect_params(out);
  bn2.collect_params(out);
}

SegModel::SegModel(UNetConfig cfg, uint64_t seed) : cfg_(std::move(cfg)), seed_(seed) {
  cfg_.validate();
  const int levels = cfg_.levels;
  const auto& ch = cfg_.channels;

  encoder_.reserve(static_cast<size_t>(levels - 1));
  for (int l = 0; l < levels - 1; ++l) {
    const int cin = l == 0 ? cfg_.in_channels : ch[static_cast<size_t>(l - 1)];
    encoder_.emplace_back(cin, ch[static_cast<size_t>(l)], seed_, "enc" + std::to_string(l));
  }
  bottleneck_ = ConvBlock(ch[static_cast<size_t>(levels - 2)], ch[static_cast<size_t>(levels - 1)],
                          seed_, "bottleneck");

  reduce_.reserve(static_cast<size_t>(levels - 1));
  decoder_.reserve(static_cast<size_t>(levels - 1));
  for (int l = 0; l < levels - 1; ++l) {
    reduce_.emplace_back(ch[static_cast<size_t>(l + 1)], ch[static_cast<size_t>(l)], 1, seed_,
                         "dec" + std::to_string(l) + ".reduce");
    decoder_.emplace_back(2 * ch[static_cast<size_t>(l)], ch[static_cast<size_t>(l)], seed_,
                          "dec" + std::to_string(l));
    if (cfg_.attention.variant != AttentionVariant::kNone) {
      heads_.emplace_back(cfg_.attention.variant, ch[static_cast<size_t>(l)], cfg_.attention,
                          seed_, "head" + std::to_string(l));
    }
  }
  final_ = Conv3dLayer(ch[0], cfg_.out_channels, 1, seed_, "final");
}

Tensor SegModel::forward(const Tensor& volume, bool train) {
  if (volume.rank() != 5 || volume.dim(1) != cfg_.in_channels) {
    throw ShapeError("forward: expected [B," + std::to_string(cfg_.in_channels) +
                     ",H,W,D], got " + shape_str(volume.shape()));
  }
  const int64_t stride = int64_t{1} << (cfg_.levels - 1);
  for (int axis = 2; axis < 5; ++axis) {
    if (volume.dim(axis) % stride != 0) {
      throw ShapeError("forward: spatial dims must be divisible by " + std::to_string(stride) +
                       ", got " + shape_str(volume.shape()));
    }
  }

  for (auto& head : heads_) head.observer = spd_observer;

  std::vector<Tensor> skips(encoder_.size());
  Tensor x = volume;
  for (size_t l = 0; l < encoder_.size(); ++l) {
    x = encoder_[l].forward(x, train);
    skips[l] = x;
    x = ops::maxpool3d(x);
  }
  x = bottleneck_.forward(x, train);

  for (int l = static_cast<int>(encoder_.size()) - 1; l >= 0; --l) {
    Tensor gate = reduce_[static_cast<size_t>(l)].forward(ops::upsample_nearest3d(x));
    Tensor skip;
    if (heads_.empty() || force_alpha_one) {
      skip = skips[static_cast<size_t>(l)];
    } else {
      skip = heads_[static_cast<size_t>(l)].forward(skips[static_cast<size_t>(l)], gate).first;
    }
    x = decoder_[static_cast<size_t>(l)].forward(ops::concat({skip, gate}, 1), train);
  }
  return ops::sigmoid(final_.forward(x));
}

Tensor SegModel::predict(const Tensor& volume) {
  if (volume.rank() != 4) {
    throw ShapeError("predict: expected [C,H,W,D], got " + shape_str(volume.shape()));
  }
  NoGradGuard guard;
  Shape batched = {1, volume.dim(0), volume.dim(1), volume.dim(2), volume.dim(3)};
  Tensor in = Tensor::from_vector(batched,
                                  std::vector<double>(volume.values().begin(), volume.values().end()));
  Tensor out = forward(in, /*train=*/false);
  return ops::reshape(out, {volume.dim(1), volume.dim(2), volume.dim(3)});
}

std::vector<Param> SegModel::params() const {
  std::vector<Param> out;
  for (const auto& block : encoder_) block.collect_params(out);
  bottleneck_.collect_params(out);
  for (size_t l = 0; l < decoder_.size(); ++l) {
    reduce_[l].collect_params(out);
    if (!heads_.empty()) heads_[l].collect_params(out);
    decoder_[l].collect_params(out);
  }
  final_.collect_params(out);
  return out;
}

std::vector<Param> SegModel::trainable_params() const {
  std::vector<Param> out;
  for (const Param& p : params()) {
    if (p.kind != ParamKind::kBuffer) out.push_back(p);
  }
  return out;
}

void SegModel::zero_grad() {
  for (Param& p : params()) p.tensor.zero_grad();
}

Tensor dice_bce_loss(const Tensor& pred, const Tensor& target, double* dice_out, double* bce_out) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("dice_bce_loss: shape mismatch " + shape_str(pred.shape()) + " vs " +
                     shape_str(target.shape()));
  }
  for (double v : target.values()) {
    if (v != 0.0 && v != 1.0) throw NumericError("dice_bce_loss: target must be binary");
  }
  constexpr double kRangeTol = 1e-6;
  for (double v : pred.values()) {
    if (v < -kRangeTol || v > 1.0 + kRangeTol) {
      throw NumericError("dice_bce_loss: prediction outside (0,1) beyond clamp tolerance");
    }
  }

  constexpr double kClamp = 1e-7;
  Tensor p = ops::clamp(pred, kClamp, 1.0 - kClamp);
  double target_sum = 0.0;
  for (double v : target.values()) target_sum += v;

  // Dice over all voxels, smoothing 1.
  Tensor intersection = ops::reduce_sum(ops::mul(p, target));
  Tensor pred_sum = ops::reduce_sum(p);
  Tensor dice_ratio = ops::div(ops::add_scalar(ops::mul_scalar(intersection, 2.0), 1.0),
                               ops::add_scalar(pred_sum, target_sum + 1.0));
  Tensor dice = ops::add_scalar(ops::mul_scalar(dice_ratio, -1.0), 1.0);

  Tensor one_minus_t = ops::add_scalar(ops::mul_scalar(target, -1.0), 1.0);
  Tensor one_minus_p = ops::add_scalar(ops::mul_scalar(p, -1.0), 1.0);
  Tensor bce_terms =
      ops::add(ops::mul(target, ops::log(p)), ops::mul(one_minus_t, ops::log(one_minus_p)));
  Tensor bce = ops::mul_scalar(ops::reduce_mean(bce_terms), -1.0);

  if (dice_out) *dice_out = dice.item();
  if (bce_out) *bce_out = bce.item();
  return ops::add(dice, bce);
}

Trainer::Trainer(SegModel& model, const TrainOptions& opts) : model_(model), opts_(opts) {
  trainables_ = model_.trainable_params();
  rmsprop_states_.reserve(trainables_.size());
  for (const Param& p : trainables_) {
    if (p.kind == ParamKind::kEuclidean) {
      rmsprop_states_.emplace_back(p.tensor.values().size(), opts_.rmsprop_lr, opts_.rmsprop_alpha,
                                   opts_.rmsprop_eps);
    } else {
      rmsprop_states_.emplace_back();
    }
  }
}

EpochStats Trainer::train_epoch(const std::vector<Sample>& data, uint64_t epoch_seed) {
  if (data.empty()) throw Error("train_epoch: empty dataset");
  const int64_t n = static_cast<int64_t>(data.size());
  std::vector<int64_t> order(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  Rng rng(epoch_seed);
  for (int64_t i = n - 1; i > 0; --i) {
    const int64_t j = rng.uniform_int(0, i);
    std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
  }

  const Shape& vshape = data.front().volume.shape();
  const int64_t c = vshape[0], h = vshape[1], w = vshape[2], d = vshape[3];
  const int64_t vol = h * w * d;

  EpochStats stats;
  double loss_sum = 0.0, grad_norm_sum = 0.0;

  for (int64_t start = 0; start < n; start += opts_.batch_size) {
    const int64_t bsz = std::min<int64_t>(opts_.batch_size, n - start);
    Tensor batch = Tensor::zeros({bsz, c, h, w, d});
    Tensor target = Tensor::zeros({bsz, 1, h, w, d});
    for (int64_t i = 0; i < bsz; ++i) {
      const Sample& s = data[static_cast<size_t>(order[static_cast<size_t>(start + i)])];
      if (s.volume.shape() != vshape) throw ShapeError("train_epoch: inhomogeneous sample shapes");
      std::copy(s.volume.values().begin(), s.volume.values().end(),
                batch.values().begin() + i * c * vol);
      std::copy(s.mask.values().begin(), s.mask.values().end(),
                target.values().begin() + i * vol);
    }

    Tape::get().clear();
    model_.zero_grad();
    Tensor pred = model_.forward(batch, /*train=*/true);
    Tensor loss = dice_bce_loss(pred, target);
    if (!std::isfinite(loss.item())) {
      std::string ids;
      for (int64_t i = 0; i < bsz; ++i) {
        ids += (i ? "," : "") + std::to_string(order[static_cast<size_t>(start + i)]);
      }
      throw NumericError("train_epoch: non-finite loss at step " + std::to_string(stats.steps) +
                         " (sample indices " + ids + ")");
    }
    spda::backward(loss);

    double sq = 0.0;
    for (const Param& p : trainables_) {
      for (double g : p.tensor.grad()) sq += g * g;
    }
    grad_norm_sum += std::sqrt(sq);

    for (size_t i = 0; i < trainables_.size(); ++i) {
      Param& p = trainables_[i];
      if (p.kind == ParamKind::kStiefel) {
        optim::stiefel_step(p.tensor, opts_.stiefel_lr);
        stats.max_stiefel_residual =
            std::max(stats.max_stiefel_residual,
                     linalg::orthonormality_residual(p.tensor.values(),
                                                     static_cast<int>(p.tensor.dim(0)),
                                                     static_cast<int>(p.tensor.dim(1))));
      } else {
        optim::rmsprop_step(p.tensor, rmsprop_states_[i]);
      }
    }

    loss_sum += loss.item();
    ++stats.steps;
  }
  Tape::get().clear();
  model_.zero_grad();

  stats.mean_loss = loss_sum / stats.steps;
  stats.mean_grad_norm = grad_norm_sum / stats.steps;
  return stats;
}

namespace {

using nlohmann::json;

json attention_to_json(const AttentionConfig& a) {
  return json{{"variant", to_string(a.variant)},
              {"reduction_ratio", a.reduction_ratio},
              {"epsilon", a.epsilon},
              {"inner_relu", a.inner_relu},
              {"isometric_vec", a.isometric_vec}};
}

AttentionConfig attention_from_json(const json& j) {
  AttentionConfig a;
  a.variant = attention_variant_from_string(j.at("variant").get<std::string>());
  a.reduction_ratio = j.at("reduction_ratio").get<int>();
  a.epsilon = j.at("epsilon").get<double>();
  a.inner_relu = j.at("inner_relu").get<bool>();
  a.isometric_vec = j.at("isometric_vec").get<bool>();
  return a;
}

json network_to_json(const UNetConfig& c) {
  return json{{"levels", c.levels},
              {"channels", c.channels},
              {"in_channels", c.in_channels},
              {"out_channels", c.out_channels},
              {"attention", attention_to_json(c.attention)}};
}

UNetConfig network_from_json(const json& j) {
  UNetConfig c;
  c.levels = j.at("levels").get<int>();
  c.channels = j.at("channels").get<std::vector<int>>();
  c.in_channels = j.at("in_channels").get<int>();
  c.out_channels = j.at("out_channels").get<int>();
  c.attention = attention_from_json(j.at("attention"));
  return c;
}

constexpr char kCheckpointMagic[4] = {'S', 'P', 'D', 'C'};
constexpr uint16_t kCheckpointVersion = 1;

}  // namespace

void SegModel::save_checkpoint(const std::string& path, int epoch,
                               const std::string& config_echo_json) const {
  json header;
  header["format"] = "spda-checkpoint";
  header["tool"] = {{"name", kToolName}, {"version", kToolVersion}};
  header["seed"] = seed_;
  header["epoch"] = epoch;
  header["network"] = network_to_json(cfg_);
  if (!config_echo_json.empty()) {
    header["config"] = json::parse(config_echo_json);
  }
  json plist = json::array();
  for (const Param& p : params()) {
    plist.push_back({{"name", p.name},
                     {"shape", p.tensor.shape()},
                     {"kind", p.kind == ParamKind::kStiefel   ? "stiefel"
                              : p.kind == ParamKind::kBuffer ? "buffer"
                                                             : "euclidean"}});
  }
  header["params"] = plist;
  const std::string hs = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  out.write(kCheckpointMagic, 4);
  const uint16_t version = kCheckpointVersion;
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  const uint32_t hlen = static_cast<uint32_t>(hs.size());
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const Param& p : params()) {
    auto v = p.tensor.values();
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  if (!out) throw IoError("failed writing checkpoint: " + path);
}

SegModel SegModel::load_checkpoint(const std::string& path, int* epoch_out,
                                   std::string* config_echo_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw IoError("incompatible checkpoint header (bad magic): " + path);
  }
  uint16_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (!in || version != kCheckpointVersion) {
    throw IoError("incompatible checkpoint header (unsupported version): " + path);
  }
  uint32_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  if (!in) throw IoError("incompatible checkpoint header (truncated): " + path);
  std::string hs(hlen, '\0');
  in.read(hs.data(), hlen);
  if (!in) throw IoError("incompatible checkpoint header (truncated): " + path);

  json header;
  try {
    header = json::parse(hs);
  } catch (const json::exception& e) {
    throw IoError(std::string("incompatible checkpoint header (bad JSON): ") + e.what());
  }
  if (header.value("format", "") != "spda-checkpoint") {
    throw IoError("incompatible checkpoint header (wrong format field)");
  }

  SegModel model(network_from_json(header.at("network")), header.at("seed").get<uint64_t>());
  const json& plist = header.at("params");
  std::vector<Param> params = model.params();
  if (plist.size() != params.size()) {
    throw IoError("incompatible checkpoint header (parameter count mismatch)");
  }
  for (size_t i = 0; i < params.size(); ++i) {
    if (plist[i].at("name").get<std::string>() != params[i].name) {
      throw IoError("incompatible checkpoint header (parameter name mismatch at index " +
                    std::to_string(i) + ")");
    }
    auto v = params[i].tensor.values();
    in.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!in) throw IoError("checkpoint truncated while reading " + params[i].name);
  }

  if (epoch_out) *epoch_out = header.at("epoch").get<int>();
  if (config_echo_out && header.contains("config")) *config_echo_out = header["config"].dump();
  return model;
}

}  // namespace spda
