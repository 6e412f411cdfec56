#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "fd_oracle.hpp"
#include "wsds/errors.hpp"
#include "wsds/losses.hpp"

namespace wsds {
namespace {

using testing::random_tensor;

const double kLn2 = std::numbers::ln2;

WeakLabelMap random_trimap(std::size_t h, std::size_t w, Rng& rng, double labeled = 0.3) {
  WeakLabelMap m(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      if (rng.uniform() >= labeled) continue;
      m.set(y, x, rng.uniform() < 0.5 ? WeakLabel::kForeground : WeakLabel::kBackground);
    }
  return m;
}

double naive_partial_ce(const Tensor& p, const WeakLabelMap& m) {
  double acc = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double q = std::clamp(p[i], kLogEps, 1 - kLogEps);
    if (m[i] == WeakLabel::kForeground) acc -= std::log(q), ++n;
    if (m[i] == WeakLabel::kBackground) acc -= std::log(1 - q), ++n;
  }
  return n ? acc / n : 0.0;
}

double naive_foreground(const Tensor& p, const WeakLabelMap& m) {
  double acc = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m[i] == WeakLabel::kForeground) acc -= std::log(std::clamp(p[i], kLogEps, 1 - kLogEps)), ++n;
  return n ? acc / n : 0.0;
}

double eval(const Var& v) { return v.value().item(); }

// ---------------------------------------------------------------------------

TEST(WeakLabelMap, CountsAndMasks) {
  WeakLabelMap m(2, 3);
  m.set(0, 0, WeakLabel::kForeground);
  m.set(1, 2, WeakLabel::kBackground);
  m.set(1, 1, WeakLabel::kBackground);
  EXPECT_EQ(m.labeled_count(), 3u);
  EXPECT_EQ(m.foreground_count(), 1u);
  EXPECT_EQ(m.background_count(), 2u);
  EXPECT_EQ(m.labeled_mask(), Tensor({1, 2, 3}, std::vector<double>{1, 0, 0, 0, 1, 1}));
  EXPECT_EQ(m.foreground_mask(), Tensor({1, 2, 3}, std::vector<double>{1, 0, 0, 0, 0, 0}));
  EXPECT_THROW(WeakLabelMap(0, 3), ShapeError);
}

TEST(PartialCe, PerfectPredictionIsNearEpsilon) {
  WeakLabelMap m(2, 2);
  m.set(0, 0, WeakLabel::kForeground);
  m.set(1, 1, WeakLabel::kBackground);
  Tape tape;
  Var p = tape.constant(Tensor({1, 2, 2}, std::vector<double>{1 - 1e-7, 0.3, 0.9, 1e-7}));
  EXPECT_NEAR(eval(partial_ce(p, m)), 1e-7, 1e-12);
}

TEST(PartialCe, AllUnknownIsZero) {
  Tape tape;
  EXPECT_EQ(eval(partial_ce(tape.constant(Tensor({1, 3, 3}, 0.2)), WeakLabelMap(3, 3))), 0.0);
}

TEST(PartialCe, TwoPixelsAtOneHalfGiveLn2) {
  WeakLabelMap m(1, 2);
  m.set(0, 0, WeakLabel::kForeground);
  m.set(0, 1, WeakLabel::kBackground);
  Tape tape;
  EXPECT_NEAR(eval(partial_ce(tape.constant(Tensor({1, 1, 2}, 0.5)), m)), kLn2, 1e-12);
}

TEST(PartialCe, MatchesNaiveLoops) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    WeakLabelMap m = random_trimap(6, 7, rng);
    Tensor p = random_tensor({1, 6, 7}, rng, 0, 1);
    Tape tape;
    EXPECT_NEAR(eval(partial_ce(tape.constant(p), m)), naive_partial_ce(p, m), 1e-12);
    EXPECT_NEAR(eval(sparse_foreground_loss(tape.constant(p), m)), naive_foreground(p, m), 1e-12);
  }
}

TEST(PartialCe, ShapeMismatchThrows) {
  Tape tape;
  EXPECT_THROW(partial_ce(tape.constant(Tensor({1, 3, 2})), WeakLabelMap(2, 3)), ShapeError);
  EXPECT_THROW(sparse_foreground_loss(tape.constant(Tensor({2, 2, 3})), WeakLabelMap(2, 3)),
               ShapeError);
}

TEST(SparseForeground, Examples) {
  WeakLabelMap m(2, 2);
  m.set(0, 0, WeakLabel::kForeground);
  m.set(0, 1, WeakLabel::kForeground);
  m.set(1, 0, WeakLabel::kForeground);
  m.set(1, 1, WeakLabel::kBackground);
  Tape tape;
  EXPECT_NEAR(eval(sparse_foreground_loss(tape.constant(Tensor({1, 2, 2}, 0.5)), m)), kLn2, 1e-12);
  EXPECT_NEAR(eval(sparse_foreground_loss(tape.constant(Tensor({1, 2, 2}, 1 - 1e-7)), m)), 1e-7,
              1e-12);
  WeakLabelMap bg_only(2, 2);
  bg_only.set(0, 0, WeakLabel::kBackground);
  EXPECT_EQ(eval(sparse_foreground_loss(tape.constant(Tensor({1, 2, 2}, 0.5)), bg_only)), 0.0);
}

TEST(UnknownInvariance, HundredRandomTrimaps) {
  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t h = 3 + rng.below(6), w = 3 + rng.below(6);
    WeakLabelMap m = random_trimap(h, w, rng);
    Tensor p = random_tensor({1, h, w}, rng, 0.01, 0.99);

    // Same labels and labeled predictions, embedded in a larger canvas whose
    // extra pixels are UNKNOWN with arbitrary predictions.
    const std::size_t H = h + 1 + rng.below(5), W = w + 1 + rng.below(5);
    const std::size_t oy = rng.below(H - h + 1), ox = rng.below(W - w + 1);
    WeakLabelMap big(H, W);
    Tensor bp = random_tensor({1, H, W}, rng, 0.01, 0.99);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        big.set(y + oy, x + ox, m.at(y, x));
        if (m.at(y, x) != WeakLabel::kUnknown) bp.at({0, y + oy, x + ox}) = p.at({0, y, x});
      }
    // Unknown pixels of the original also get fresh predictions.
    Tensor p2 = p;
    for (std::size_t i = 0; i < m.size(); ++i)
      if (m[i] == WeakLabel::kUnknown) p2[i] = rng.uniform(0.01, 0.99);

    Tape tape;
    const double a = eval(partial_ce(tape.constant(p), m));
    EXPECT_NEAR(eval(partial_ce(tape.constant(bp), big)), a, 1e-12);
    EXPECT_NEAR(eval(partial_ce(tape.constant(p2), m)), a, 1e-12);
    const double f = eval(sparse_foreground_loss(tape.constant(p), m));
    EXPECT_NEAR(eval(sparse_foreground_loss(tape.constant(bp), big)), f, 1e-12);
    EXPECT_NEAR(eval(sparse_foreground_loss(tape.constant(p2), m)), f, 1e-12);
  }
}

TEST(WeakLoss, Ln2CombinationAndDefaults) {
  EXPECT_EQ(kDefaultAlpha, 0.5);
  WeakLabelMap m(1, 2);
  m.set(0, 0, WeakLabel::kForeground);
  m.set(0, 1, WeakLabel::kBackground);
  Tape tape;
  Var p = tape.constant(Tensor({1, 1, 2}, 0.5));
  LossResult r = weak_loss(p, m, 0.5);
  EXPECT_NEAR(r.report.components.at("l_p"), kLn2, 1e-12);
  EXPECT_NEAR(r.report.components.at("l_f"), kLn2, 1e-12);
  EXPECT_NEAR(r.report.total, 1.5 * kLn2, 1e-12);
  EXPECT_NEAR(r.report.total, 1.0397, 1e-4);
  EXPECT_EQ(eval(r.total), r.report.total);
  EXPECT_TRUE(r.report.batch_had_labels);
}

TEST(WeakLoss, AffineInAlpha) {
  Rng rng(2);
  WeakLabelMap m = random_trimap(5, 5, rng);
  Tape tape;
  Var p = tape.constant(random_tensor({1, 5, 5}, rng, 0.05, 0.95));
  const LossReport r0 = weak_loss(p, m, 0.0).report;
  EXPECT_EQ(r0.total, r0.components.at("l_p"));
  for (double a : {0.25, 0.5, 1.0, 3.0}) {
    const LossReport r = weak_loss(p, m, a).report;
    EXPECT_NEAR(r.total, r.components.at("l_p") + a * r.components.at("l_f"), 1e-12);
  }
  EXPECT_THROW(weak_loss(p, m, -0.1), ConfigError);
}

TEST(WeakLoss, AveragesImageWiseOverBatch) {
  Rng rng(5);
  WeakLabelMap a = random_trimap(4, 4, rng), b = random_trimap(4, 4, rng, 0.8);
  Tensor pa = random_tensor({1, 4, 4}, rng, 0.05, 0.95), pb = random_tensor({1, 4, 4}, rng, 0.05, 0.95);
  Tape tape;
  LossReport r = weak_loss({tape.constant(pa), tape.constant(pb)}, {&a, &b}, 0.5).report;
  EXPECT_NEAR(r.components.at("l_p"), (naive_partial_ce(pa, a) + naive_partial_ce(pb, b)) / 2, 1e-12);
  EXPECT_NEAR(r.components.at("l_f"), (naive_foreground(pa, a) + naive_foreground(pb, b)) / 2, 1e-12);
}

TEST(Consistency, Examples) {
  Rng rng(1);
  Tensor t = random_tensor({1, 4, 4}, rng, 0.3, 0.7);
  Tensor shifted = t;
  for (double& v : shifted.data()) v += 0.2;
  Tape tape;
  EXPECT_EQ(eval(consistency_loss(tape.constant(t), t)), 0.0);
  EXPECT_NEAR(eval(consistency_loss(tape.constant(shifted), t)), 0.2, 1e-12);
  EXPECT_NEAR(eval(consistency_loss(tape.constant(t), shifted)), 0.2, 1e-12);
  EXPECT_THROW(consistency_loss(tape.constant(Tensor({1, 4, 3})), t), ShapeError);
}

TEST(Consistency, GradientReachesOnlyStudent) {
  Rng rng(1);
  Tensor t = random_tensor({1, 3, 3}, rng), s = random_tensor({1, 3, 3}, rng);
  Tape tape;
  Var student = tape.leaf(s, true);
  Var teacher = tape.constant(t);
  Var loss = consistency_loss(student, teacher.value());
  tape.backward(loss);
  EXPECT_EQ(tape.grad(teacher), nullptr);
  const Tensor g = tape.grad_or_zeros(student);
  for (std::size_t i = 0; i < 9; ++i)
    EXPECT_NEAR(g[i], (s[i] > t[i] ? 1.0 : -1.0) / 9.0, 1e-15);
}

TEST(SemiLoss, UnlabeledBatchUsesBeta2) {
  EXPECT_EQ(kDefaultBeta1, 0.1);
  EXPECT_EQ(kDefaultBeta2, 0.5);
  Tensor t({1, 2, 2}, 0.4), s({1, 2, 2}, 0.6);
  Tape tape;
  LossResult r = semi_loss({tape.constant(s), tape.constant(s)}, {t, t}, {nullptr, nullptr});
  EXPECT_FALSE(r.report.batch_had_labels);
  EXPECT_EQ(r.report.branch(), "unlabeled");
  EXPECT_NEAR(r.report.components.at("l_c"), 0.2, 1e-12);
  EXPECT_NEAR(r.report.total, 0.1, 1e-12);
  EXPECT_EQ(r.report.components.at("l_weak"), 0.0);
}

TEST(SemiLoss, OneLabeledSampleSwitchesBranch) {
  Rng rng(9);
  WeakLabelMap m = random_trimap(4, 4, rng);
  std::vector<Tensor> teacher{random_tensor({1, 4, 4}, rng, 0.1, 0.9),
                              random_tensor({1, 4, 4}, rng, 0.1, 0.9)};
  std::vector<Tensor> student{random_tensor({1, 4, 4}, rng, 0.1, 0.9),
                              random_tensor({1, 4, 4}, rng, 0.1, 0.9)};
  Tape tape;
  std::vector<Var> preds{tape.constant(student[0]), tape.constant(student[1])};
  LossResult off = semi_loss(preds, teacher, {nullptr, nullptr});
  LossResult on = semi_loss(preds, teacher, {nullptr, &m});
  EXPECT_FALSE(off.report.batch_had_labels);
  EXPECT_TRUE(on.report.batch_had_labels);
  EXPECT_EQ(on.report.branch(), "labeled");

  double lc = 0;
  for (int i = 0; i < 2; ++i)
    for (std::size_t k = 0; k < 16; ++k) lc += std::abs(student[i][k] - teacher[i][k]) / 32.0;
  const double lw = naive_partial_ce(student[1], m) + 0.5 * naive_foreground(student[1], m);
  EXPECT_NEAR(on.report.components.at("l_c"), lc, 1e-12);
  EXPECT_NEAR(on.report.components.at("l_weak"), lw, 1e-12);
  EXPECT_NEAR(on.report.total, lw + 0.1 * lc, 1e-12);
  EXPECT_NEAR(off.report.total, 0.5 * lc, 1e-12);
  for (const LossResult* r : {&on, &off}) {
    const auto& c = r->report.components;
    const double rebuilt = r->report.batch_had_labels ? c.at("l_weak") + 0.1 * c.at("l_c")
                                                      : 0.5 * c.at("l_c");
    EXPECT_NEAR(rebuilt, r->report.total, 1e-12);
    EXPECT_EQ(eval(r->total), r->report.total);
  }
}

TEST(SemiLoss, PerfectAgreementIsNearZero) {
  WeakLabelMap m(2, 2);
  m.set(0, 0, WeakLabel::kForeground);
  m.set(1, 1, WeakLabel::kBackground);
  Tensor p({1, 2, 2}, std::vector<double>{1 - 1e-7, 0.5, 0.5, 1e-7});
  Tape tape;
  LossResult r = semi_loss({tape.constant(p), tape.constant(p)}, {p, p}, {&m, nullptr});
  EXPECT_NEAR(r.report.total, 0.0, 1e-6);
  EXPECT_GE(r.report.total, 0.0);
}

TEST(Losses, NonNegativeAndFinite) {
  Rng rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    WeakLabelMap m = random_trimap(4, 4, rng);
    Tensor p = random_tensor({1, 4, 4}, rng, 0, 1);
    p[0] = 0.0;
    p[1] = 1.0;
    Tape tape;
    for (double v : {eval(partial_ce(tape.constant(p), m)),
                     eval(sparse_foreground_loss(tape.constant(p), m)),
                     semi_loss({tape.constant(p)}, {Tensor({1, 4, 4}, 0.5)}, {&m}).report.total}) {
      EXPECT_TRUE(std::isfinite(v));
      EXPECT_GE(v, 0.0);
    }
  }
}

TEST(Losses, GradientsMatchFiniteDifferences) {
  Rng rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    WeakLabelMap a = random_trimap(4, 5, rng), b = random_trimap(4, 5, rng);
    Tensor t0 = random_tensor({1, 4, 5}, rng, 0.05, 0.95), t1 = random_tensor({1, 4, 5}, rng, 0.05, 0.95);
    std::vector<Tensor> inputs{random_tensor({1, 4, 5}, rng, 0.05, 0.95),
                               random_tensor({1, 4, 5}, rng, 0.05, 0.95)};
    auto pce = [&](Tape&, const std::vector<Var>& v) { return partial_ce(v[0], a); };
    auto fg = [&](Tape&, const std::vector<Var>& v) { return sparse_foreground_loss(v[0], a); };
    auto weak = [&](Tape&, const std::vector<Var>& v) { return weak_loss(v, {&a, &b}).total; };
    auto cons = [&](Tape&, const std::vector<Var>& v) { return consistency_loss(v, {t0, t1}); };
    auto semi = [&](Tape&, const std::vector<Var>& v) {
      return semi_loss(v, {t0, t1}, {nullptr, &b}).total;
    };
    auto semi_u = [&](Tape&, const std::vector<Var>& v) {
      return semi_loss(v, {t0, t1}, {nullptr, nullptr}).total;
    };
    for (const testing::ScalarFn& fn : {testing::ScalarFn(pce), testing::ScalarFn(fg),
                                        testing::ScalarFn(weak), testing::ScalarFn(cons),
                                        testing::ScalarFn(semi), testing::ScalarFn(semi_u)}) {
      EXPECT_LT(testing::max_gradient_error(fn, inputs), 1e-5);
    }
  }
}

}  // namespace
}  // namespace wsds
