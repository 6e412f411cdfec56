// Acceptance run: prints one PASS/FAIL line per criterion and exits non-zero
// if any criterion fails. Detail lines are indented.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include "attention_oracle.hpp"
#include "fd_oracle.hpp"
#include "wsds/checkpoint.hpp"
#include "wsds/data.hpp"
#include "wsds/errors.hpp"
#include "wsds/gradcheck.hpp"
#include "wsds/losses.hpp"
#include "wsds/metrics.hpp"
#include "wsds/sweep.hpp"
#include "wsds/trainer.hpp"

namespace wsds {
namespace {

namespace fs = std::filesystem;
using testing::random_tensor;

constexpr double kLn2 = std::numbers::ln2;

struct Verdict {
  bool pass = true;
  std::string summary;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

void detail(const std::string& line) {
  std::printf("  %s\n", line.c_str());
  std::fflush(stdout);
}

// ---------------------------------------------------------------------------
// 1. Gradient suite.

Verdict gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  GradCheckOptions opt;
  opt.instances = 20;
  Verdict v;
  double worst_op = 0, worst_net = 0;
  for (const GradCheckResult& r : run_gradient_suite(opt)) {
    if (!r.passed()) {
      v.pass = false;
      detail("failed: " + r.name + fmt(" error %.3g tolerance %.0e", r.max_error, r.tolerance));
    }
    (r.tolerance < 5e-4 ? worst_op : worst_net) =
        std::max(r.tolerance < 5e-4 ? worst_op : worst_net, r.max_error);
  }
  const double secs = seconds_since(t0);
  if (secs >= 120) v.pass = false;
  v.summary = fmt("worst op/layer rel. err %.2e (< 1e-4), neck/model %.2e (< 1e-3), %.1fs (< 120s)",
                  worst_op, worst_net, secs);
  return v;
}

// ---------------------------------------------------------------------------
// 2. Attention oracle.

Verdict attention_oracle() {
  Verdict v;
  double worst_out = 0, worst_sum = 0;
  const std::size_t configs = 12;
  for (std::uint64_t trial = 0; trial < configs; ++trial) {
    Rng rng(1000 + trial);
    EncoderConfig e;
    e.heads = std::vector<std::size_t>{1, 2, 4}[trial % 3];
    e.points = 1 + rng.below(3);
    e.hidden_dim = 4 * (1 + rng.below(3));
    e.ffn_dim = 2 * e.hidden_dim;
    const std::size_t a = 1 + rng.below(3), b = 1 + rng.below(3);
    const LevelShapes shapes{{{a, b}, {2 * a, 2 * b}, {4 * a, 4 * b}}};
    const std::size_t n = token_count(shapes), c = e.hidden_dim;
    const Tensor ref = generate_reference_points(shapes);
    const Tensor mf = random_tensor({c, n}, rng), emb = random_tensor({c, n}, rng);
    const testing::AttentionTensors t = testing::random_attention(e, rng, 1.5);

    Tape tape;
    AttentionResult r = deformable_attention(tape.constant(mf), tape.constant(emb), ref, shapes,
                                             testing::bind_attention(tape, t), e);
    Tensor naive_w;
    const Tensor naive = testing::naive_deformable_attention(mf, emb, ref, shapes, t, e.heads,
                                                             e.points, &naive_w);
    for (std::size_t i = 0; i < naive.numel(); ++i) {
      worst_out = std::max(worst_out, std::abs(r.output.value()[i] - naive[i]));
    }
    const Tensor& w = r.weights.value();
    const std::size_t group = kNumLevels * e.points;
    for (std::size_t q = 0; q < n * e.heads; ++q) {
      double s = 0;
      for (std::size_t k = 0; k < group; ++k) s += w[q * group + k];
      worst_sum = std::max(worst_sum, std::abs(s - 1.0));
    }
  }
  v.pass = worst_out <= 1e-10 && worst_sum <= 1e-12;
  v.summary = fmt("%.0f random configs, max |tape - naive| %.2e (<= 1e-10), max |sum w - 1| %.2e "
                  "(<= 1e-12)",
                  static_cast<double>(configs), worst_out, worst_sum);
  return v;
}

// ---------------------------------------------------------------------------
// 3. Loss oracles.

WeakLabelMap labels_from(std::size_t h, std::size_t w, const std::string& codes) {
  WeakLabelMap m(h, w);
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (codes[i] == 'f') m.set(i / w, i % w, WeakLabel::kForeground);
    if (codes[i] == 'b') m.set(i / w, i % w, WeakLabel::kBackground);
  }
  return m;
}

Verdict loss_oracles() {
  Verdict v;
  std::vector<std::string> failures;
  auto check = [&](const std::string& name, double got, double want) {
    if (!(std::abs(got - want) <= 1e-12)) {
      failures.push_back(name + fmt(" got %.15g want %.15g", got, want));
    }
  };
  const double eps_loss = -std::log1p(-kLogEps);
  Tape tape;
  auto c = [&](Shape s, double value) { return tape.constant(Tensor(std::move(s), value)); };

  // Partial cross-entropy.
  {
    Tensor p({1, 1, 2}, std::vector<double>{1 - kLogEps, kLogEps});
    check("partial_ce perfect", partial_ce(tape.constant(p), labels_from(1, 2, "fb")).value().item(),
          eps_loss);
    check("partial_ce all unknown", partial_ce(c({1, 3, 3}, 0.3), WeakLabelMap(3, 3)).value().item(),
          0.0);
    check("partial_ce ln 2", partial_ce(c({1, 1, 2}, 0.5), labels_from(1, 2, "fb")).value().item(),
          kLn2);
  }
  // Sparse foreground loss.
  {
    const WeakLabelMap three = labels_from(2, 2, "fffb");
    check("foreground perfect",
          sparse_foreground_loss(c({1, 2, 2}, 1 - kLogEps), three).value().item(), eps_loss);
    check("foreground none",
          sparse_foreground_loss(c({1, 2, 2}, 0.3), labels_from(2, 2, "bb..")).value().item(), 0.0);
    check("foreground ln 2", sparse_foreground_loss(c({1, 2, 2}, 0.5), three).value().item(), kLn2);
  }
  // Weak loss.
  {
    const WeakLabelMap m = labels_from(1, 2, "fb");
    const LossResult r = weak_loss(c({1, 1, 2}, 0.5), m, 0.5);
    check("weak 1.0397", r.report.total, 1.5 * kLn2);
    check("weak 1.0397 (4 d.p.)", std::round(r.report.total * 1e4) / 1e4, 1.0397);
    const LossResult z = weak_loss(c({1, 1, 2}, 0.3), m, 0.0);
    check("weak alpha 0", z.report.total, z.report.components.at("l_p"));
  }
  // Consistency.
  {
    Rng rng(5);
    const Tensor t = random_tensor({1, 4, 4}, rng, 0.2, 0.8);
    check("consistency identical", consistency_loss(tape.constant(t), t).value().item(), 0.0);
    Tensor gap = t;
    for (double& x : gap.data()) x += 0.2;
    check("consistency gap 0.2", consistency_loss(tape.constant(gap), t).value().item(), 0.2);
  }
  // Gating with the default weights alpha 0.5, beta1 0.1, beta2 0.5.
  {
    const Tensor teacher({1, 1, 2}, 0.3);
    const LossResult unlabeled = semi_loss({c({1, 1, 2}, 0.5)}, {teacher}, {nullptr});
    check("unlabeled batch 0.5 * 0.2", unlabeled.report.total, 0.1);
    if (unlabeled.report.batch_had_labels) failures.push_back("unlabeled batch flagged labeled");

    const WeakLabelMap m = labels_from(1, 2, "fb");
    const LossResult mixed = semi_loss({c({1, 1, 2}, 0.5), c({1, 1, 2}, 0.5)},
                                       {teacher, teacher}, {&m, nullptr});
    check("mixed batch l_weak + 0.1 * 0.2", mixed.report.total, 1.5 * kLn2 + 0.02);
    if (!mixed.report.batch_had_labels) failures.push_back("mixed batch not flagged labeled");

    Tensor perfect({1, 1, 2}, std::vector<double>{1 - kLogEps, kLogEps});
    const LossResult agree = semi_loss({tape.constant(perfect)}, {perfect}, {&m});
    check("student = teacher, perfect on scribbles", agree.report.total, 1.5 * eps_loss);
  }

  // Unknown pixels never matter.
  std::size_t invariance_failures = 0;
  Rng rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t h = 3 + rng.below(6), w = 3 + rng.below(6);
    WeakLabelMap m(h, w);
    for (std::size_t i = 0; i < h * w; ++i) {
      const double u = rng.uniform();
      if (u < 0.15) m.set(i / w, i % w, WeakLabel::kForeground);
      else if (u < 0.3) m.set(i / w, i % w, WeakLabel::kBackground);
    }
    const Tensor p = random_tensor({1, h, w}, rng, 0.01, 0.99);
    const std::size_t H = h + 1 + rng.below(5), W = w + 1 + rng.below(5);
    const std::size_t oy = rng.below(H - h + 1), ox = rng.below(W - w + 1);
    WeakLabelMap big(H, W);
    Tensor bp = random_tensor({1, H, W}, rng, 0.01, 0.99);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        big.set(y + oy, x + ox, m.at(y, x));
        if (m.at(y, x) != WeakLabel::kUnknown) bp.at({0, y + oy, x + ox}) = p.at({0, y, x});
      }
    const double a = partial_ce(tape.constant(p), m).value().item();
    const double b = partial_ce(tape.constant(bp), big).value().item();
    const double f = sparse_foreground_loss(tape.constant(p), m).value().item();
    const double g = sparse_foreground_loss(tape.constant(bp), big).value().item();
    if (std::abs(a - b) > 1e-12 || std::abs(f - g) > 1e-12) ++invariance_failures;
  }
  for (const std::string& f : failures) detail("failed: " + f);
  v.pass = failures.empty() && invariance_failures == 0;
  v.summary = fmt("%.0f hand examples off by > 1e-12, %.0f of 100 random trimaps break UNKNOWN "
                  "invariance",
                  static_cast<double>(failures.size()), static_cast<double>(invariance_failures));
  return v;
}

// ---------------------------------------------------------------------------
// 4-6. Desk runs.

struct SeedRun {
  std::uint64_t seed;
  double teacher, student, alpha0, alpha1, no_dten;
};

std::vector<SeedRun> desk_runs() {
  std::vector<SeedRun> runs;
  const ModelConfig model;
  const SgdConfig sgd;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto t0 = std::chrono::steady_clock::now();
    SynthConfig data;
    data.seed = seed;
    const Dataset ds = synthesize_dataset(data);

    StagePlan weak;
    weak.seed = seed;
    auto teacher_score = [&](double alpha, const ModelConfig& m, SegModel* keep) {
      StagePlan plan = weak;
      plan.alpha = alpha;
      SegModel teacher = train_weak_stage(ds, m, plan, sgd);
      const double score = evaluate(teacher, ds, Split::kTest).mdice;
      if (keep) *keep = std::move(teacher);
      return score;
    };

    SegModel teacher(model, seed);
    SeedRun r{seed, 0, 0, 0, 0, 0};
    r.teacher = teacher_score(0.5, model, &teacher);
    const std::string teacher_id = model_id(teacher);
    const PseudoLabelCache cache = generate_pseudo_labels(teacher, ds);
    StagePlan semi = weak;
    semi.stage = Stage::kSemi;
    const SegModel student = train_semi_stage(ds, cache, model, semi, sgd);
    r.student = evaluate(student, ds, Split::kTest).mdice;
    if (model_id(teacher) != teacher_id) throw Error("teacher changed during the semi stage");

    r.alpha0 = teacher_score(0.0, model, nullptr);
    r.alpha1 = teacher_score(1.0, model, nullptr);
    ModelConfig plain = model;
    plain.use_dten = false;
    r.no_dten = teacher_score(0.5, plain, nullptr);
    detail(fmt("seed %.0f: teacher %.4f student %.4f | alpha 0: %.4f", static_cast<double>(seed),
               r.teacher, r.student, r.alpha0) +
           fmt(" alpha 1: %.4f | no DTEN %.4f (%.0fs)", r.alpha1, r.no_dten, seconds_since(t0)));
    runs.push_back(r);
  }
  return runs;
}

double median_over(const std::vector<SeedRun>& runs, double SeedRun::*field) {
  std::vector<double> v;
  for (const SeedRun& r : runs) v.push_back(r.*field);
  return median_of(v);
}

// ---------------------------------------------------------------------------
// 7. Sparsity.

Verdict sparsity() {
  Verdict v;
  std::vector<double> split, mean;
  for (std::uint64_t seed : {1, 2, 3}) {
    SynthConfig cfg;
    cfg.seed = seed;
    const LabeledPixelStats s = labeled_pixel_stats(synthesize_dataset(cfg));
    split.push_back(s.split_percent);
    mean.push_back(s.mean_percent);
    detail(fmt("seed %.0f: %.3f%% of train-split pixels labeled, %.3f%% per scribbled image",
               static_cast<double>(seed), s.split_percent, s.mean_percent));
    if (s.split_percent < 1.0 || s.split_percent > 3.0) v.pass = false;
    if (s.mean_percent < 1.0 || s.mean_percent > 3.0) v.pass = false;
  }
  v.summary = fmt("train-split share %.2f-%.2f%%, per-scribbled-image mean %.2f-%.2f%% (all in "
                  "[1, 3])",
                  *std::min_element(split.begin(), split.end()),
                  *std::max_element(split.begin(), split.end()),
                  *std::min_element(mean.begin(), mean.end()),
                  *std::max_element(mean.begin(), mean.end()));
  return v;
}

// ---------------------------------------------------------------------------
// 8. Determinism and formats.

std::vector<char> file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Verdict determinism_and_formats() {
  Verdict v;
  std::vector<std::string> failures;
  const fs::path dir = fs::temp_directory_path() / "wsds_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);

  SynthConfig data;
  data.n_train = 12;
  data.n_test = 4;
  data.height = data.width = 32;
  const Dataset ds = synthesize_dataset(data);
  ModelConfig model;
  model.backbone_channels = {16, 8, 8};
  model.stem_channels = 8;
  model.encoder.hidden_dim = 16;
  StagePlan plan;
  plan.epochs = 2;
  plan.height = plan.width = 32;

  // Same seed, same bytes: both stages.
  for (int run = 0; run < 2; ++run) {
    const SegModel teacher = train_weak_stage(ds, model, plan, SgdConfig{});
    save_checkpoint(teacher, dir / ("teacher" + std::to_string(run) + ".ckpt"));
    const SegModel student =
        train_semi_stage(ds, generate_pseudo_labels(teacher, ds), model, plan, SgdConfig{});
    save_checkpoint(student, dir / ("student" + std::to_string(run) + ".ckpt"));
  }
  for (const char* name : {"teacher", "student"}) {
    const auto a = file_bytes(dir / (std::string(name) + "0.ckpt"));
    if (a.empty() || a != file_bytes(dir / (std::string(name) + "1.ckpt"))) {
      failures.push_back(std::string(name) + " checkpoints differ between identical runs");
    }
  }

  // Checkpoint round trip.
  {
    SegModel fresh(model, 99);
    load_checkpoint(fresh, dir / "teacher0.ckpt");
    save_checkpoint(fresh, dir / "again.ckpt");
    if (file_bytes(dir / "again.ckpt") != file_bytes(dir / "teacher0.ckpt")) {
      failures.push_back("checkpoint reload changes bytes");
    }
  }

  // Trimap and dataset PNG round trips.
  {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      WeakLabelMap m(1 + rng.below(40), 1 + rng.below(40));
      for (std::size_t i = 0; i < m.size(); ++i) {
        const double u = rng.uniform();
        m.set(i / m.width(), i % m.width(),
              u < 0.3 ? WeakLabel::kForeground
                      : (u < 0.6 ? WeakLabel::kBackground : WeakLabel::kUnknown));
      }
      save_trimap_png(m, dir / "trimap.png");
      if (!(load_trimap_png(dir / "trimap.png") == m)) {
        failures.push_back("trimap round trip differs");
        break;
      }
    }
    save_dataset(ds, dir / "data");
    const Dataset back = load_dataset(read_manifest(dir / "data" / "manifest.json"));
    bool same = back.samples.size() == ds.samples.size();
    for (std::size_t i = 0; same && i < ds.samples.size(); ++i) {
      const Sample &a = ds.samples[i], &b = back.samples[i];
      same = a.id == b.id && a.image == b.image && a.gt == b.gt && a.trimap == b.trimap;
    }
    if (!same) failures.push_back("dataset PNG round trip differs");
  }

  // Dice and IoU against set counting.
  {
    Rng rng(8);
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t h = 1 + rng.below(6), w = 1 + rng.below(6);
      Tensor p({1, h, w}), g({1, h, w});
      std::set<std::size_t> ps, gs, inter, uni;
      for (std::size_t i = 0; i < h * w; ++i) {
        if (rng.uniform() < 0.4) p[i] = 1.0, ps.insert(i), uni.insert(i);
        if (rng.uniform() < 0.4) g[i] = 1.0, gs.insert(i), uni.insert(i);
        if (ps.count(i) && gs.count(i)) inter.insert(i);
      }
      const double d = ps.size() + gs.size() == 0
                           ? 1.0
                           : 2.0 * static_cast<double>(inter.size()) /
                                 static_cast<double>(ps.size() + gs.size());
      const double j = uni.empty() ? 1.0
                                   : static_cast<double>(inter.size()) /
                                         static_cast<double>(uni.size());
      if (dice(p, g) != d || iou(p, g) != j) {
        failures.push_back("dice/iou differ from set counting");
        break;
      }
    }
  }
  fs::remove_all(dir);
  for (const std::string& f : failures) detail("failed: " + f);
  v.pass = failures.empty();
  v.summary = v.pass ? "bit-identical teacher and student checkpoints, lossless checkpoint/trimap/"
                       "dataset round trips, dice/iou exact on 100 random masks"
                     : fmt("%.0f checks failed", static_cast<double>(failures.size()));
  return v;
}

}  // namespace
}  // namespace wsds

int main() {
  using namespace wsds;
  int failed = 0;
  auto report = [&](int id, const std::string& title, const std::function<Verdict()>& fn) {
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    failed += !v.pass;
    std::printf("%s criterion %d (%s): %s\n", v.pass ? "PASS" : "FAIL", id, title.c_str(),
                v.summary.c_str());
    std::fflush(stdout);
  };

  report(1, "gradient suite", gradient_suite);
  report(2, "attention oracle", attention_oracle);
  report(3, "loss oracles", loss_oracles);
  report(7, "sparsity", sparsity);
  report(8, "determinism and formats", determinism_and_formats);

  std::vector<SeedRun> runs;
  std::string desk_error;
  try {
    runs = desk_runs();
  } catch (const std::exception& e) {
    desk_error = std::string("threw: ") + e.what();
  }
  auto desk = [&](std::function<Verdict()> fn) {
    return [&, fn]() { return desk_error.empty() ? fn() : Verdict{false, desk_error}; };
  };
  report(4, "end-to-end desk run", desk([&] {
           const double s = median_over(runs, &SeedRun::student);
           const double t = median_over(runs, &SeedRun::teacher);
           return Verdict{s >= 0.70 && s >= t,
                          fmt("median student mDice %.4f (>= 0.70), median teacher %.4f "
                              "(student >= teacher)",
                              s, t)};
         }));
  report(5, "alpha ablation", desk([&] {
           const double a = median_over(runs, &SeedRun::teacher);
           const double a0 = median_over(runs, &SeedRun::alpha0);
           const double a1 = median_over(runs, &SeedRun::alpha1);
           return Verdict{a > a0 && a > a1,
                          fmt("median mDice alpha 0.5: %.4f, alpha 0: %.4f, alpha 1: %.4f "
                              "(0.5 must beat both)",
                              a, a0, a1)};
         }));
  report(6, "DTEN ablation", desk([&] {
           const double with = median_over(runs, &SeedRun::teacher);
           const double without = median_over(runs, &SeedRun::no_dten);
           return Verdict{with >= without, fmt("median mDice with DTEN %.4f, without %.4f "
                                               "(with >= without)",
                                               with, without)};
         }));
  std::printf("%d of 8 criteria failed\n", failed);
  return failed == 0 ? 0 : 1;
}
