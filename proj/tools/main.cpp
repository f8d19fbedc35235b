#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "spda/config.hpp"
#include "spda/evalkit.hpp"
#include "spda/gradcheck.hpp"
#include "spda/segnet.hpp"
#include "spda/synthdata.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Exit code contract: 0 success, 1 usage/config error, 2 runtime or numeric
// failure (including a failing gradcheck).
constexpr int kOk = 0;
constexpr int kUsageError = 1;
constexpr int kRuntimeError = 2;

spda::UNetConfig make_unet_config(const spda::RunConfig& cfg) {
  spda::UNetConfig net;
  net.levels = cfg.levels;
  net.channels = cfg.channels;
  net.in_channels = cfg.in_channels;
  net.out_channels = cfg.out_channels;
  net.attention.variant = spda::attention_variant_from_string(cfg.attention);
  net.attention.reduction_ratio = cfg.reduction_ratio;
  net.attention.epsilon = cfg.epsilon;
  net.attention.inner_relu = cfg.inner_relu;
  net.attention.isometric_vec = cfg.isometric_vec;
  return net;
}

void require_empty_or_force(const std::string& dir, bool force) {
  if (fs::exists(dir) && !fs::is_directory(dir)) {
    throw spda::ConfigError("output path exists and is not a directory: " + dir);
  }
  if (fs::is_directory(dir) && !fs::is_empty(dir) && !force) {
    throw spda::ConfigError("output directory is not empty (use --force): " + dir);
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw spda::IoError("cannot write " + path.string());
  out << text;
}

int cmd_synth(const spda::RunConfig& cfg, const std::string& out_dir, bool force) {
  spda::synth::SynthParams params;
  params.n_cases = cfg.cases;
  params.prevalence = cfg.prevalence;
  params.size_mix = cfg.size_mix;
  params.shape = cfg.shape;
  params.voxel_volume_mm3 = cfg.voxel_volume_mm3;
  params.validate();

  require_empty_or_force(out_dir, force);
  auto cases = spda::synth::generate_dataset(params, cfg.seed);
  spda::synth::write_dataset(cases, params, cfg.seed, out_dir, cfg.to_json());

  int with_lesion = 0;
  for (const auto& c : cases) with_lesion += c.has_lesion ? 1 : 0;
  std::cout << "synth: wrote " << cases.size() << " cases (" << with_lesion
            << " with lesions) to " << out_dir << "\n";
  return kOk;
}

int cmd_gradcheck(const spda::RunConfig& cfg, int n_seeds, const std::string& inject,
                  const std::string& out_path) {
  spda::gradcheck::Report report = spda::gradcheck::run(cfg.seed, n_seeds, inject);

  std::printf("%-22s %-14s %s\n", "op", "max_rel_err", "status");
  for (const auto& e : report.entries) {
    std::printf("%-22s %-14.3e %s\n", e.name.c_str(), e.max_rel_err, e.pass ? "pass" : "FAIL");
  }
  std::printf("gradcheck: %s (%zu ops, %d seed%s, %.1f s)\n", report.all_pass ? "PASS" : "FAIL",
              report.entries.size(), report.seeds, report.seeds == 1 ? "" : "s",
              report.elapsed_seconds);

  if (!out_path.empty()) {
    json j;
    j["tool"] = {{"name", spda::kToolName}, {"version", spda::kToolVersion}};
    j["seed"] = cfg.seed;
    j["config"] = json::parse(cfg.to_json());
    j["seeds"] = report.seeds;
    j["all_pass"] = report.all_pass;
    json ops = json::array();
    for (const auto& e : report.entries) {
      ops.push_back({{"op", e.name},
                     {"max_rel_err", e.max_rel_err},
                     {"tolerance", e.tolerance},
                     {"pass", e.pass}});
    }
    j["ops"] = ops;
    write_text(out_path, j.dump(2) + "\n");
  }
  return report.all_pass ? kOk : kRuntimeError;
}

std::vector<spda::Sample> to_samples(const std::vector<spda::synth::SynthCase>& cases) {
  std::vector<spda::Sample> samples;
  samples.reserve(cases.size());
  for (const auto& c : cases) samples.push_back({c.volume, c.mask});
  return samples;
}

int cmd_train(const spda::RunConfig& cfg, const std::string& dataset_dir,
              const std::string& out_dir, bool quiet) {
  auto cases = spda::synth::load_dataset(dataset_dir);
  if (cases.empty()) throw spda::IoError("dataset is empty: " + dataset_dir);
  auto samples = to_samples(cases);

  spda::SegModel model(make_unet_config(cfg), cfg.seed);
  spda::TrainOptions opts;
  opts.rmsprop_lr = cfg.rmsprop_lr;
  opts.rmsprop_alpha = cfg.rmsprop_alpha;
  opts.rmsprop_eps = cfg.rmsprop_eps;
  opts.stiefel_lr = cfg.stiefel_lr;
  opts.batch_size = cfg.batch_size;
  spda::Trainer trainer(model, opts);

  fs::create_directories(out_dir);
  std::ofstream log(fs::path(out_dir) / "train_log.jsonl", std::ios::trunc);
  if (!log) throw spda::IoError("cannot write training log in " + out_dir);
  log << json({{"type", "header"},
               {"tool", {{"name", spda::kToolName}, {"version", spda::kToolVersion}}},
               {"seed", cfg.seed},
               {"dataset", dataset_dir},
               {"n_cases", cases.size()},
               {"config", json::parse(cfg.to_json())}})
             .dump()
      << "\n";

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const uint64_t epoch_seed = spda::derive_seed(cfg.seed, "epoch:" + std::to_string(epoch));
    spda::EpochStats stats = trainer.train_epoch(samples, epoch_seed);
    log << json({{"type", "epoch"},
                 {"epoch", epoch},
                 {"mean_loss", stats.mean_loss},
                 {"mean_grad_norm", stats.mean_grad_norm},
                 {"max_stiefel_residual", stats.max_stiefel_residual},
                 {"steps", stats.steps}})
               .dump()
        << "\n";
    if (!quiet) {
      std::cout << "epoch " << epoch << ": loss " << stats.mean_loss << " grad_norm "
                << stats.mean_grad_norm << "\n";
    }
  }

  const std::string ckpt = (fs::path(out_dir) / "checkpoint.spdc").string();
  model.save_checkpoint(ckpt, cfg.epochs, cfg.to_json());
  log << json({{"type", "final"}, {"epochs", cfg.epochs}, {"checkpoint", "checkpoint.spdc"}}).dump()
      << "\n";
  std::cout << "train: wrote " << ckpt << "\n";
  return kOk;
}

int cmd_eval(const spda::RunConfig& cfg, const std::string& dataset_dir,
             const std::string& checkpoint, const std::string& out_dir) {
  spda::SegModel model = spda::SegModel::load_checkpoint(checkpoint);
  auto cases = spda::synth::load_dataset(dataset_dir);
  if (cases.empty()) throw spda::IoError("dataset is empty: " + dataset_dir);
  if (model.config().in_channels != 3) {
    throw spda::IoError("checkpoint expects " + std::to_string(model.config().in_channels) +
                        " input channels; dataset provides 3");
  }

  const int threads = cfg.resolved_eval_threads();
  std::vector<spda::eval::EvalCaseInput> inputs(cases.size());
  {
    spda::NoGradGuard guard;
    std::atomic<size_t> next{0};
    auto worker = [&] {
      for (;;) {
        const size_t i = next.fetch_add(1);
        if (i >= cases.size()) return;
        inputs[i].id = cases[i].id;
        inputs[i].prob_map = model.predict(cases[i].volume);
        inputs[i].gt_mask = cases[i].mask;
        inputs[i].label = cases[i].has_lesion;
      }
    };
    std::vector<std::thread> pool;
    const int n = std::max(1, std::min<int>(threads, static_cast<int>(cases.size())));
    for (int t = 0; t < n - 1; ++t) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
  }

  spda::eval::EvalOptions opts;
  opts.threshold_steps = cfg.threshold_steps;
  opts.size_mode =
      cfg.size_mode == "fixed" ? spda::eval::SizeMode::kFixed : spda::eval::SizeMode::kPercentile;
  opts.voxel_volume_mm3 = cfg.voxel_volume_mm3;
  opts.threads = threads;
  spda::eval::EvalReport report = spda::eval::evaluate_cases(inputs, opts);

  fs::create_directories(out_dir);
  const std::string echo = cfg.to_json();
  write_text(fs::path(out_dir) / "metrics.json", report.to_json(echo, cfg.seed) + "\n");
  write_text(fs::path(out_dir) / "pr_curve.csv", report.pr_csv(echo, cfg.seed));
  write_text(fs::path(out_dir) / "froc_curve.csv", report.froc_csv(echo, cfg.seed));

  std::cout << "eval: mean DSC " << report.mean_dsc << ", AP " << report.ap << ", AUC-ROC "
            << (report.has_auc ? std::to_string(report.auc) : std::string("n/a"))
            << ", Sen@1FP " << report.sen_at_fp << " -> " << out_dir << "\n";
  return kOk;
}

struct CommonCli {
  std::string config_path;
  uint64_t seed = 0;
  bool strict_paper = false;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* attention_opt = nullptr;
  std::string attention;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "Config file (INI sections, key = value)");
    seed_opt = cmd->add_option("--seed", seed, "Master seed");
    attention_opt = cmd->add_option("--attention", attention, "Attention variant")
                        ->check(CLI::IsMember({"none", "foa", "soa", "soga"}));
    cmd->add_flag("--strict-paper", strict_paper,
                  "Disable the sqrt(2) triangle scaling and inner ReLU; fixed size thresholds");
  }

  spda::RunConfig resolve() const {
    spda::RunConfig cfg;
    if (!config_path.empty()) cfg.load_ini(config_path);
    if (seed_opt && seed_opt->count() > 0) cfg.seed = seed;
    if (attention_opt && attention_opt->count() > 0) cfg.attention = attention;
    if (strict_paper) cfg.apply_strict_paper();
    return cfg;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"second-order geometric attention segmentation workbench"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  CommonCli synth_common;
  synth_common.attach(synth);
  std::string synth_out;
  bool synth_force = false;
  int synth_cases = 0;
  double synth_prevalence = -1.0;
  std::vector<double> synth_mix;
  std::vector<int64_t> synth_shape;
  synth->add_option("--out", synth_out, "Output dataset directory")->required();
  synth->add_flag("--force", synth_force, "Write into a non-empty directory");
  auto* synth_cases_opt = synth->add_option("--cases", synth_cases, "Number of cases");
  auto* synth_prev_opt = synth->add_option("--prevalence", synth_prevalence, "Lesion prevalence");
  auto* synth_mix_opt =
      synth->add_option("--mix", synth_mix, "Size mix weights small,med,large")->delimiter(',');
  auto* synth_shape_opt =
      synth->add_option("--shape", synth_shape, "Volume shape H,W,D")->delimiter(',');

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every operation");
  CommonCli gc_common;
  gc_common.attach(gradcheck);
  int gc_seeds = 1;
  std::string gc_inject, gc_out;
  gradcheck->add_option("--seeds", gc_seeds, "Number of seeds")->check(CLI::PositiveNumber);
  gradcheck->add_option("--inject-wrong-sign", gc_inject,
                        "Negate the analytic gradient of one op (negative control)");
  gradcheck->add_option("--out", gc_out, "Write a JSON report to this path");

  // train
  auto* train = app.add_subcommand("train", "Train a model on a dataset");
  CommonCli train_common;
  train_common.attach(train);
  std::string train_dataset, train_out;
  int train_epochs = 0;
  bool train_quiet = false;
  train->add_option("--dataset", train_dataset, "Dataset directory")->required();
  train->add_option("--out", train_out, "Output directory (checkpoint + log)")->required();
  auto* train_epochs_opt = train->add_option("--epochs", train_epochs, "Training epochs");
  train->add_flag("--quiet", train_quiet, "Suppress per-epoch stdout");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  CommonCli eval_common;
  eval_common.attach(eval);
  std::string eval_dataset, eval_checkpoint, eval_out, eval_size_mode;
  int eval_threads = 0;
  eval->add_option("--dataset", eval_dataset, "Dataset directory")->required();
  eval->add_option("--checkpoint", eval_checkpoint, "Checkpoint file")->required();
  eval->add_option("--out", eval_out, "Output directory (metrics + curves)")->required();
  auto* eval_mode_opt = eval->add_option("--size-mode", eval_size_mode, "fixed or percentile")
                            ->check(CLI::IsMember({"fixed", "percentile"}));
  auto* eval_threads_opt = eval->add_option("--threads", eval_threads, "Eval parallelism cap");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsageError;
  }

  try {
    if (synth->parsed()) {
      spda::RunConfig cfg = synth_common.resolve();
      if (synth_cases_opt->count() > 0) cfg.cases = synth_cases;
      if (synth_prev_opt->count() > 0) cfg.prevalence = synth_prevalence;
      if (synth_mix_opt->count() > 0) {
        if (synth_mix.size() != 3) throw spda::ConfigError("--mix needs 3 weights");
        for (size_t i = 0; i < 3; ++i) cfg.size_mix[i] = synth_mix[i];
      }
      if (synth_shape_opt->count() > 0) {
        if (synth_shape.size() != 3) throw spda::ConfigError("--shape needs 3 dims");
        for (size_t i = 0; i < 3; ++i) cfg.shape[i] = synth_shape[i];
      }
      return cmd_synth(cfg, synth_out, synth_force);
    }
    if (gradcheck->parsed()) {
      return cmd_gradcheck(gc_common.resolve(), gc_seeds, gc_inject, gc_out);
    }
    if (train->parsed()) {
      spda::RunConfig cfg = train_common.resolve();
      if (train_epochs_opt->count() > 0) cfg.epochs = train_epochs;
      return cmd_train(cfg, train_dataset, train_out, train_quiet);
    }
    if (eval->parsed()) {
      spda::RunConfig cfg = eval_common.resolve();
      if (eval_mode_opt->count() > 0) cfg.size_mode = eval_size_mode;
      if (eval_threads_opt->count() > 0) cfg.threads = eval_threads;
      return cmd_eval(cfg, eval_dataset, eval_checkpoint, eval_out);
    }
  } catch (const spda::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kUsageError;
}
