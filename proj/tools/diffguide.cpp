// Command-line front end: fixture generation, the three training regimes,
// and the evaluation/report modes.

#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "diffguide/eval.hpp"
#include "diffguide/train.hpp"

using namespace diffguide;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir = "out";
  std::string checkpoint_path;
  int64_t seed = -1;  // -1: keep the config's seed
};

void add_common(CLI::App* cmd, CommonArgs& args, bool need_config,
                bool need_checkpoint) {
  auto* c = cmd->add_option("--config", args.config_path, "run configuration (JSON)");
  if (need_config) c->required();
  cmd->add_option("--seed", args.seed, "override the config seed");
  cmd->add_option("--out", args.out_dir, "output directory");
  auto* k = cmd->add_option("--checkpoint", args.checkpoint_path, "checkpoint path");
  if (need_checkpoint) k->required();
}

RunConfig load_run_config(const CommonArgs& args, Regime regime) {
  RunConfig cfg = args.config_path.empty() ? desk_preset() : load_config(args.config_path);
  cfg.regime = regime;
  if (args.seed >= 0) cfg.seed = static_cast<uint64_t>(args.seed);
  if (!args.checkpoint_path.empty() && regime == Regime::guided)
    cfg.teacher_checkpoint = args.checkpoint_path;
  return cfg;
}

int run_train(const CommonArgs& args, Regime regime) {
  RunConfig cfg = load_run_config(args, regime);
  TrainOutput out = train_run(cfg, args.out_dir);
  std::cout << "trained " << regime_name(regime) << " for " << cfg.iterations
            << " iterations\n"
            << "loss log:   " << out.log_path << "\n"
            << "checkpoint: " << out.final_checkpoint << "\n"
            << "ema:        " << out.final_ema_checkpoint << "\n";
  return 0;
}

std::vector<ImageSample> load_eval_samples(const RunConfig& cfg) {
  if (cfg.eval_annotations.empty())
    throw std::runtime_error("eval: config has no eval_annotations");
  LoadedDataset data = load_dataset(cfg.eval_annotations, cfg.image_root);
  if (data.dropped_zero_area > 0)
    std::cerr << "warning: dropped " << data.dropped_zero_area
              << " zero-area annotations\n";
  return data.samples;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"diffusion-guided detector workbench"};
  app.require_subcommand(1);

  CommonArgs train_args, diff_args, guided_args, eval_args, corrupt_args, calib_args;
  std::string fixture_dir;
  int fixture_train = 40, fixture_eval = 16;
  uint64_t fixture_seed = 0;

  auto* mk = app.add_subcommand("make-fixture", "generate the synthetic two-domain dataset");
  mk->add_option("--out", fixture_dir, "fixture directory (default: $DIFFGUIDE_CACHE/fixture)");
  mk->add_option("--train", fixture_train, "training images (domain A)");
  mk->add_option("--eval", fixture_eval, "eval images per domain");
  mk->add_option("--seed", fixture_seed, "generation seed");

  add_common(app.add_subcommand("train-baseline", "train the conv-backbone detector"),
             train_args, false, false);
  add_common(app.add_subcommand("train-diff", "train the diffusion-feature detector"),
             diff_args, false, false);
  add_common(app.add_subcommand("train-guided", "train the guided student"),
             guided_args, false, false);
  add_common(app.add_subcommand("eval", "clean evaluation"), eval_args, true, true);
  add_common(app.add_subcommand("corrupt-eval", "15x5 corruption benchmark"),
             corrupt_args, true, true);
  add_common(app.add_subcommand("calibrate", "confidence calibration report"),
             calib_args, true, true);

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("make-fixture")) {
      if (fixture_dir.empty()) {
        const char* cache = std::getenv("DIFFGUIDE_CACHE");
        if (!cache || !*cache)
          throw std::runtime_error(
              "make-fixture: pass --out or set DIFFGUIDE_CACHE");
        fixture_dir = std::string(cache) + "/fixture";
      }
      make_fixture(fixture_dir, fixture_train, fixture_eval, fixture_seed);
      std::cout << "fixture written to " << fixture_dir << "\n";
      return 0;
    }
    if (app.got_subcommand("train-baseline")) return run_train(train_args, Regime::baseline);
    if (app.got_subcommand("train-diff"))
      return run_train(diff_args, Regime::diffusion_detector);
    if (app.got_subcommand("train-guided")) return run_train(guided_args, Regime::guided);

    const CommonArgs* args = nullptr;
    enum { kClean, kCorrupt, kCalib } mode = kClean;
    if (app.got_subcommand("eval")) {
      args = &eval_args;
      mode = kClean;
    } else if (app.got_subcommand("corrupt-eval")) {
      args = &corrupt_args;
      mode = kCorrupt;
    } else {
      args = &calib_args;
      mode = kCalib;
    }

    RunConfig cfg = load_config(args->config_path);
    if (args->seed >= 0) cfg.seed = static_cast<uint64_t>(args->seed);
    std::vector<ImageSample> samples = load_eval_samples(cfg);
    DetectFn fn = make_detect_fn(cfg, args->checkpoint_path, cfg.seed);
    std::filesystem::create_directories(args->out_dir);
    std::filesystem::path out(args->out_dir);

    CleanReport clean = evaluate_clean(fn, samples, cfg.detector.num_classes);
    write_clean_csv((out / "clean.csv").string(), clean);
    if (mode == kClean) {
      write_summary_json((out / "summary.json").string(), clean, nullptr, nullptr);
      std::cout << "map50 " << clean.map50 << " ap_range " << clean.ap_range << "\n";
    } else if (mode == kCorrupt) {
      CorruptionResults res =
          evaluate_corruptions(fn, samples, cfg.detector.num_classes, cfg.seed);
      write_corruption_csv((out / "corruptions.csv").string(), res);
      write_summary_json((out / "summary.json").string(), clean, &res, nullptr);
      std::cout << "mpc " << mpc(res) << " rpc "
                << (clean.ap_range > 0 ? rpc(mpc(res), clean.ap_range) : 0.0) << "\n";
    } else {
      CalibrationReport rep = evaluate_calibration(fn, samples);
      write_calibration_csv((out / "calibration.csv").string(), rep);
      write_summary_json((out / "summary.json").string(), clean, nullptr, &rep);
      std::cout << "d_ece " << rep.d_ece << "\n";
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
