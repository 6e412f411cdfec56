#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "wsds/errors.hpp"
#include "wsds/metrics.hpp"

namespace wsds {
namespace {

Tensor mask(std::size_t h, std::size_t w, std::initializer_list<std::size_t> on) {
  Tensor t({1, h, w});
  for (std::size_t i : on) t[i] = 1.0;
  return t;
}

TEST(Dice, Examples) {
  Tensor a = mask(3, 3, {0, 1, 4});
  EXPECT_EQ(dice(a, a), 1.0);
  EXPECT_EQ(dice(a, mask(3, 3, {2, 5})), 0.0);
  EXPECT_NEAR(dice(mask(3, 3, {0, 1, 2, 3}), mask(3, 3, {0, 1})), 2.0 / 3.0, 1e-15);
  EXPECT_EQ(dice(mask(2, 2, {}), mask(2, 2, {})), 1.0);
  EXPECT_THROW(dice(mask(2, 2, {}), mask(2, 3, {})), ShapeError);
}

TEST(Iou, Examples) {
  Tensor a = mask(3, 3, {0, 1, 4});
  EXPECT_EQ(iou(a, a), 1.0);
  EXPECT_EQ(iou(mask(3, 3, {0, 1, 2}), mask(3, 3, {1, 2, 3})), 0.5);
  EXPECT_EQ(iou(mask(2, 2, {}), mask(2, 2, {})), 1.0);
  EXPECT_THROW(iou(mask(2, 2, {}), mask(2, 3, {})), ShapeError);
}

TEST(Metrics, AgreeWithSetCountingOracle) {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t h = 1 + rng.below(6), w = 1 + rng.below(6);
    Tensor p({1, h, w}), g({1, h, w});
    std::set<std::size_t> ps, gs;
    for (std::size_t i = 0; i < h * w; ++i) {
      if (rng.uniform() < 0.4) p[i] = 1.0, ps.insert(i);
      if (rng.uniform() < 0.4) g[i] = 1.0, gs.insert(i);
    }
    std::set<std::size_t> inter, uni = ps;
    for (std::size_t i : gs) {
      if (ps.count(i)) inter.insert(i);
      uni.insert(i);
    }
    const double d = (ps.empty() && gs.empty())
                         ? 1.0
                         : 2.0 * static_cast<double>(inter.size()) /
                               static_cast<double>(ps.size() + gs.size());
    const double j = uni.empty() ? 1.0
                                 : static_cast<double>(inter.size()) /
                                       static_cast<double>(uni.size());
    const std::size_t background = h * w - gs.size();
    const double fp = background == 0 ? 0.0
                                      : static_cast<double>(ps.size() - inter.size()) /
                                            static_cast<double>(background);
    EXPECT_EQ(dice(p, g), d);
    EXPECT_EQ(iou(p, g), j);
    EXPECT_EQ(false_positive_rate(p, g), fp);
    EXPECT_NEAR(dice(p, g), 2 * iou(p, g) / (1 + iou(p, g)), 1e-12);
    EXPECT_LE(iou(p, g), dice(p, g));
  }
}

TEST(FalsePositiveRate, Examples) {
  EXPECT_EQ(false_positive_rate(mask(2, 2, {0, 1}), mask(2, 2, {0})), 1.0 / 3.0);
  EXPECT_EQ(false_positive_rate(mask(2, 2, {0}), mask(2, 2, {0})), 0.0);
  EXPECT_EQ(false_positive_rate(mask(1, 2, {0, 1}), mask(1, 2, {0, 1})), 0.0);
}

TEST(Binarize, TiesCountAsForeground) {
  Tensor p({1, 1, 3}, std::vector<double>{0.49, 0.5, 0.51});
  EXPECT_EQ(binarize(p), Tensor({1, 1, 3}, std::vector<double>{0, 1, 1}));
  EXPECT_EQ(binarize(p, 0.51), Tensor({1, 1, 3}, std::vector<double>{0, 0, 1}));
}

Dataset small_dataset() {
  SynthConfig c;
  c.n_train = 4;
  c.n_test = 6;
  c.height = c.width = 32;
  return synthesize_dataset(c);
}

TEST(Evaluate, OraclePredictorScoresOne) {
  Dataset ds = small_dataset();
  EvalReport r = evaluate([](const Sample& s) { return *s.gt; }, ds, Split::kTest);
  EXPECT_EQ(r.images.size(), 6u);
  EXPECT_EQ(r.mdice, 1.0);
  EXPECT_EQ(r.miou, 1.0);
}

TEST(Evaluate, UniformHalfPredictsEverythingForeground) {
  Dataset ds = small_dataset();
  EvalReport r = evaluate([](const Sample& s) { return Tensor({1, 32, 32}, 0.5); }, ds,
                          Split::kTest);
  for (const ImageScore& s : r.images) {
    const Sample& sample = *std::find_if(ds.samples.begin(), ds.samples.end(),
                                         [&](const Sample& x) { return x.id == s.id; });
    double g = 0;
    for (double v : sample.gt->data()) g += v;
    EXPECT_NEAR(s.iou, g / 1024.0, 1e-15);
    EXPECT_NEAR(s.dice, 2 * g / (1024.0 + g), 1e-15);
    EXPECT_EQ(s.false_positive_rate, 1.0);
  }
}

TEST(Evaluate, AggregatesMatchCsvColumns) {
  Dataset ds = small_dataset();
  SegModel model(ModelConfig{}, 3);
  EvalReport r = evaluate(model, ds, Split::kTest);
  EXPECT_EQ(r.model_id.size(), 16u);
  const auto path = std::filesystem::temp_directory_path() / "wsds_eval.csv";
  r.write_csv(path);

  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "id,dice,iou");
  double sd = 0, si = 0, md = -1, mi = -1;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string id, d, i;
    std::getline(ss, id, ',');
    std::getline(ss, d, ',');
    std::getline(ss, i, ',');
    if (id == "mean") {
      md = std::stod(d);
      mi = std::stod(i);
    } else {
      sd += std::stod(d);
      si += std::stod(i);
      ++n;
    }
  }
  EXPECT_EQ(n, 6u);
  EXPECT_NEAR(md, sd / n, 1e-12);
  EXPECT_NEAR(mi, si / n, 1e-12);
  EXPECT_NEAR(r.mdice, sd / n, 1e-12);

  EvalReport again = evaluate(model, ds, Split::kTest);
  EXPECT_EQ(again.mdice, r.mdice);
  EXPECT_EQ(again.miou, r.miou);
}

TEST(Evaluate, MissingMaskIsAnError) {
  Dataset ds = small_dataset();
  ds.samples.back().gt.reset();
  EXPECT_THROW(evaluate([](const Sample&) { return Tensor({1, 32, 32}); }, ds, Split::kTest),
               DataError);
}

}  // namespace
}  // namespace wsds
