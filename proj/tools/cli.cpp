#include "cli.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

#include "CLI11.hpp"
#include "wsds/checkpoint.hpp"
#include "wsds/config.hpp"
#include "wsds/data.hpp"
#include "wsds/errors.hpp"
#include "wsds/gradcheck.hpp"
#include "wsds/metrics.hpp"
#include "wsds/sweep.hpp"
#include "wsds/trainer.hpp"

namespace wsds::cli {

namespace fs = std::filesystem;

namespace {

std::string format(const char* fmt, double a, double b = 0.0, double c = 0.0) {
  char buf[160];
  std::snprintf(buf, sizeof buf, fmt, a, b, c);
  return buf;
}

/// The run config stored next to a checkpoint.
fs::path sidecar(const fs::path& checkpoint) { return checkpoint.string() + ".json"; }

// Flags shared by the commands that train. Unset flags leave the config file
// (or the built-in defaults) alone.
struct Overrides {
  std::optional<std::size_t> epochs, batch_size, size;
  std::optional<double> alpha, beta1, beta2, learning_rate;
  std::optional<std::uint64_t> seed;
  bool no_dten = false;

  void attach(CLI::App* cmd) {
    cmd->add_option("--epochs", epochs, "Training epochs");
    cmd->add_option("--batch-size", batch_size, "Mini-batch size");
    cmd->add_option("--size", size, "Square training size (multiple of 16)");
    cmd->add_option("--alpha", alpha, "Weight of the sparse foreground loss");
    cmd->add_option("--beta1", beta1, "Consistency weight for batches with labels");
    cmd->add_option("--beta2", beta2, "Consistency weight for unlabeled batches");
    cmd->add_option("--lr", learning_rate, "Initial learning rate");
    cmd->add_option("--seed", seed, "Run seed");
    cmd->add_flag("--no-dten", no_dten, "Drop the transformer neck");
  }

  void apply(RunConfig& c) const {
    if (epochs) c.plan.epochs = *epochs;
    if (batch_size) c.sgd.batch_size = *batch_size;
    if (size) c.plan.height = c.plan.width = *size;
    if (alpha) c.plan.alpha = *alpha;
    if (beta1) c.plan.beta1 = *beta1;
    if (beta2) c.plan.beta2 = *beta2;
    if (learning_rate) c.sgd.learning_rate = *learning_rate;
    if (seed) c.plan.seed = *seed;
    if (no_dten) c.model.use_dten = false;
  }
};

// --config wins, then the checkpoint's sidecar, then the defaults.
RunConfig resolve_config(const std::string& config_path, const fs::path& checkpoint) {
  if (!config_path.empty()) return load_run_config(config_path);
  if (!checkpoint.empty() && fs::exists(sidecar(checkpoint))) {
    return load_run_config(sidecar(checkpoint));
  }
  return RunConfig{};
}

Dataset load_at(const std::string& manifest, const RunConfig& c) {
  return load_dataset(read_manifest(manifest), std::make_pair(c.plan.height, c.plan.width));
}

SegModel load_model(const fs::path& checkpoint, const RunConfig& c, ModelRole role) {
  SegModel model(c.model, c.plan.seed, role);
  load_checkpoint(model, checkpoint);
  return model;
}

EpochCallback progress(std::ostream& out, const char* stage) {
  return [&out, stage](std::size_t epoch, double loss) {
    out << stage << " epoch " << epoch + 1 << " loss " << format("%.6f", loss) << '\n';
    out.flush();
  };
}

void save_outputs(const SegModel& model, const RunConfig& c, const fs::path& out_path,
                  const TrainingLog& log, const std::string& log_path, std::ostream& out) {
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  save_checkpoint(model, out_path);
  save_run_config(c, sidecar(out_path));
  if (!log_path.empty()) log.write_csv(log_path);
  out << "checkpoint " << out_path.string() << " id " << model_id(model) << '\n';
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Scribble-supervised segmentation: data, two-stage training, evaluation",
               "wsds"};
  app.require_subcommand(1);

  // synth
  SynthConfig synth;
  std::size_t synth_size = 64;
  std::string synth_out;
  auto* cmd_synth = app.add_subcommand("synth", "Generate a synthetic scribble-annotated dataset");
  cmd_synth->add_option("--n-train", synth.n_train, "Train images")->capture_default_str();
  cmd_synth->add_option("--n-test", synth.n_test, "Test images")->capture_default_str();
  cmd_synth->add_option("--size", synth_size, "Square image size")->capture_default_str();
  cmd_synth->add_option("--seed", synth.seed, "Generator seed")->capture_default_str();
  cmd_synth->add_option("--labeled-fraction", synth.labeled_fraction,
                        "Share of train images that get scribbles")
      ->capture_default_str();
  cmd_synth->add_option("--out", synth_out, "Output directory")->required();

  // train-weak
  std::string manifest, config_path, out_path, log_path;
  Overrides overrides;
  auto* cmd_weak = app.add_subcommand("train-weak", "Train the teacher on scribbled images");
  cmd_weak->add_option("--manifest", manifest, "Dataset manifest.json")->required();
  cmd_weak->add_option("--config", config_path, "JSON run config");
  cmd_weak->add_option("--out", out_path, "Checkpoint to write")->required();
  cmd_weak->add_option("--log", log_path, "Per-step loss CSV");
  overrides.attach(cmd_weak);

  // pseudo
  std::string checkpoint, cache_path;
  auto* cmd_pseudo = app.add_subcommand("pseudo", "Write teacher pseudo-labels for the train split");
  cmd_pseudo->add_option("--checkpoint", checkpoint, "Teacher checkpoint")->required();
  cmd_pseudo->add_option("--manifest", manifest, "Dataset manifest.json")->required();
  cmd_pseudo->add_option("--config", config_path, "JSON run config");
  cmd_pseudo->add_option("--out", cache_path, "Pseudo-label cache to write")->required();

  // train-semi
  std::string teacher_path;
  Overrides semi_overrides;
  auto* cmd_semi = app.add_subcommand("train-semi", "Train the student with pseudo-labels");
  cmd_semi->add_option("--manifest", manifest, "Dataset manifest.json")->required();
  cmd_semi->add_option("--cache", cache_path, "Pseudo-label cache")->required();
  cmd_semi->add_option("--teacher", teacher_path, "Teacher checkpoint")->required();
  cmd_semi->add_option("--config", config_path, "JSON run config");
  cmd_semi->add_option("--out", out_path, "Checkpoint to write")->required();
  cmd_semi->add_option("--log", log_path, "Per-step loss CSV");
  semi_overrides.attach(cmd_semi);

  // eval
  std::string split = "test";
  double threshold = kDefaultThreshold;
  auto* cmd_eval = app.add_subcommand("eval", "Score a checkpoint with Dice and IoU");
  cmd_eval->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  cmd_eval->add_option("--manifest", manifest, "Dataset manifest.json")->required();
  cmd_eval->add_option("--split", split, "train or test")->capture_default_str();
  cmd_eval->add_option("--threshold", threshold, "Binarization threshold")->capture_default_str();
  cmd_eval->add_option("--config", config_path, "JSON run config");
  cmd_eval->add_option("--out", out_path, "Per-image CSV to write")->required();

  // stats
  std::string histogram_path;
  auto* cmd_stats = app.add_subcommand("stats", "Labeled-pixel statistics of the train split");
  cmd_stats->add_option("--manifest", manifest, "Dataset manifest.json")->required();
  cmd_stats->add_option("--out", out_path, "Per-image CSV to write")->required();
  cmd_stats->add_option("--histogram", histogram_path, "Histogram CSV to write");

  // sweep
  std::string grid_path;
  auto* cmd_sweep = app.add_subcommand("sweep", "Alpha and beta studies on synthetic data");
  cmd_sweep->add_option("--grid", grid_path, "JSON sweep grid")->required();
  cmd_sweep->add_option("--out", out_path, "Sweep CSV to write")->required();

  // gradcheck
  GradCheckOptions grad;
  auto* cmd_grad = app.add_subcommand("gradcheck", "Finite-difference check of every gradient");
  cmd_grad->add_option("--instances", grad.instances, "Random instances per op")
      ->capture_default_str();
  cmd_grad->add_option("--seed", grad.seed, "Seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    const auto subs = app.get_subcommands();
    out << (subs.empty() ? app.help() : subs.front()->help());
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    const auto subs = app.get_subcommands();
    err << "error: " << e.what() << "\n\n" << (subs.empty() ? app.help() : subs.front()->help());
    return kExitUsage;
  }

  try {
    if (cmd_synth->parsed()) {
      synth.height = synth.width = synth_size;
      const Dataset ds = synthesize_dataset(synth);
      save_dataset(ds, synth_out);
      const LabeledPixelStats stats = labeled_pixel_stats(ds);
      out << "wrote " << ds.samples.size() << " samples (" << stats.images.size()
          << " scribbled) to " << fs::path(synth_out) / "manifest.json" << '\n';
    } else if (cmd_weak->parsed()) {
      RunConfig c = config_path.empty() ? RunConfig{} : load_run_config(config_path);
      overrides.apply(c);
      c.plan.stage = Stage::kWeak;
      c.validate();
      const Dataset ds = load_at(manifest, c);
      TrainingLog log;
      SegModel teacher = train_weak_stage(ds, c.model, c.plan, c.sgd, &log, progress(out, "weak"));
      save_outputs(teacher, c, out_path, log, log_path, out);
    } else if (cmd_pseudo->parsed()) {
      const RunConfig c = resolve_config(config_path, checkpoint);
      const SegModel teacher = load_model(checkpoint, c, ModelRole::kTeacher);
      const Dataset ds = load_at(manifest, c);
      const PseudoLabelCache cache = generate_pseudo_labels(teacher, ds);
      save_pseudo_labels(cache, cache_path);
      out << "wrote " << cache.size() << " pseudo-labels from " << model_id(teacher) << " to "
          << cache_path << '\n';
    } else if (cmd_semi->parsed()) {
      RunConfig c = resolve_config(config_path, teacher_path);
      semi_overrides.apply(c);
      c.plan.stage = Stage::kSemi;
      c.validate();
      // Loading checks that the teacher matches the configured architecture.
      const SegModel teacher = load_model(teacher_path, c, ModelRole::kTeacher);
      const Dataset ds = load_at(manifest, c);
      const PseudoLabelCache cache = load_pseudo_labels(cache_path);
      TrainingLog log;
      SegModel student =
          train_semi_stage(ds, cache, c.model, c.plan, c.sgd, &log, progress(out, "semi"));
      out << "teacher " << model_id(teacher) << " labeled batches "
          << log.branch_count("labeled") << " unlabeled batches "
          << log.branch_count("unlabeled") << '\n';
      save_outputs(student, c, out_path, log, log_path, out);
    } else if (cmd_eval->parsed()) {
      const RunConfig c = resolve_config(config_path, checkpoint);
      const SegModel model = load_model(checkpoint, c, ModelRole::kTeacher);
      const Dataset ds = load_at(manifest, c);
      const EvalReport report = evaluate(model, ds, parse_split(split), threshold);
      report.write_csv(out_path);
      out << "model " << report.model_id << " " << split << " images " << report.images.size()
          << format(" mDice %.4f mIoU %.4f", report.mdice, report.miou) << '\n';
    } else if (cmd_stats->parsed()) {
      const Dataset ds = load_dataset(read_manifest(manifest));
      const LabeledPixelStats stats = labeled_pixel_stats(ds);
      write_stats_csv(stats, out_path);
      if (!histogram_path.empty()) write_histogram_csv(stats, histogram_path);
      out << "labeled images " << stats.images.size() << '\n'
          << "mean labeled pixels per scribbled image " << format_percent(stats.mean_percent)
          << "%\n"
          << "labeled pixels across the train split " << format_percent(stats.split_percent)
          << "%\n";
    } else if (cmd_sweep->parsed()) {
      const SweepGrid grid = load_sweep_grid(grid_path);
      const SweepResult result = run_sweep(grid, [&out](const SweepRow& r) {
        out << r.study << " alpha " << r.alpha;
        if (r.beta1) out << " beta " << *r.beta1 << "/" << *r.beta2;
        out << " seed " << *r.seed << format(" mDice %.4f mIoU %.4f", r.mdice, r.miou) << '\n';
        out.flush();
      });
      result.write_csv(out_path);
      out << "wrote " << result.rows.size() << " rows to " << out_path << '\n';
    } else if (cmd_grad->parsed()) {
      bool ok = true;
      grad.on_result = [&](const GradCheckResult& r) {
        ok = ok && r.passed();
        out << (r.passed() ? "ok   " : "FAIL ") << r.name << " instances " << r.instances
            << format(" max rel err %.3g (tol %.0e)", r.max_error, r.tolerance) << '\n';
        out.flush();
      };
      run_gradient_suite(grad);
      out << (ok ? "all gradients match" : "gradient check failed") << '\n';
      return ok ? kExitOk : kExitFailure;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace wsds::cli
