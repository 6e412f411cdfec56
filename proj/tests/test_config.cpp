#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "wsds/config.hpp"
#include "wsds/errors.hpp"
#include "wsds/gradcheck.hpp"
#include "wsds/ops.hpp"
#include "wsds/sweep.hpp"

namespace wsds {
namespace {

TEST(RunConfig, DefaultsMatchTheDeskSetup) {
  RunConfig c;
  EXPECT_EQ(c.sgd.momentum, 0.9);
  EXPECT_EQ(c.sgd.weight_decay, 0.0005);
  EXPECT_EQ(c.sgd.batch_size, 4u);
  EXPECT_EQ(c.plan.alpha, 0.5);
  EXPECT_EQ(c.plan.beta1, 0.1);
  EXPECT_EQ(c.plan.beta2, 0.5);
  EXPECT_EQ(c.plan.epochs, 30u);
  EXPECT_EQ(c.plan.height, 64u);
  EXPECT_NO_THROW(c.validate());
}

TEST(RunConfig, KeysOverrideOnlyWhatTheyName) {
  RunConfig c = parse_run_config(
      R"({"learning_rate": 0.2, "batch_size": 2, "alpha": 1, "use_dten": false,
          "backbone_channels": [12, 10, 6], "heads": 4, "seed": 9})");
  EXPECT_EQ(c.sgd.learning_rate, 0.2);
  EXPECT_EQ(c.sgd.batch_size, 2u);
  EXPECT_EQ(c.plan.alpha, 1.0);
  EXPECT_FALSE(c.model.use_dten);
  EXPECT_EQ(c.model.backbone_channels, (std::array<std::size_t, 3>{12, 10, 6}));
  EXPECT_EQ(c.model.encoder.heads, 4u);
  EXPECT_EQ(c.plan.seed, 9u);
  EXPECT_EQ(c.sgd.momentum, 0.9);
  EXPECT_EQ(c.plan.beta1, 0.1);

  RunConfig base;
  base.plan.epochs = 3;
  EXPECT_EQ(parse_run_config("{}", base).plan.epochs, 3u);
}

TEST(RunConfig, RejectsUnknownKeysAndWrongTypes) {
  EXPECT_THROW(parse_run_config(R"({"lr": 0.1})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"batch_size": 2.5})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"epochs": -1})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"use_dten": 1})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"alpha": "big"})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"backbone_channels": [1, 2]})"), ConfigError);
  EXPECT_THROW(parse_run_config("[1, 2]"), ConfigError);
  EXPECT_THROW(parse_run_config("{\"alpha\": "), FormatError);
}

TEST(RunConfig, FileRoundTripIsExact) {
  RunConfig c;
  c.sgd.learning_rate = 0.1 / 3.0;
  c.plan.beta1 = 0.3;
  c.model.encoder.dropout = 0.0;
  c.model.use_dten = false;
  const auto path = std::filesystem::temp_directory_path() / "wsds_config.json";
  save_run_config(c, path);
  RunConfig back = load_run_config(path);
  EXPECT_EQ(back.sgd.learning_rate, c.sgd.learning_rate);
  EXPECT_EQ(back.plan.beta1, 0.3);
  EXPECT_EQ(back.model, c.model);
  EXPECT_EQ(run_config_json(back), run_config_json(c));
  EXPECT_THROW(load_run_config(path.string() + ".missing"), IoError);
}

// ---------------------------------------------------------------------------

TEST(Median, OddAndEvenCounts) {
  EXPECT_EQ(median_of({3, 1, 2}), 2.0);
  EXPECT_EQ(median_of({4, 1, 3, 2}), 2.5);
  EXPECT_EQ(median_of({7}), 7.0);
  EXPECT_THROW(median_of({}), ConfigError);
}

TEST(SweepGrid, ParsesEveryKey) {
  SweepGrid g = parse_sweep_grid(
      R"({"alphas": [0, 0.25], "betas": [[0.1, 0.5]], "seeds": [4, 5], "n_train": 10,
          "n_test": 3, "labeled_fraction": 0.5, "weak_epochs": 2, "semi_epochs": 1,
          "config": {"height": 32, "width": 32}})");
  EXPECT_EQ(g.alphas, (std::vector<double>{0, 0.25}));
  ASSERT_EQ(g.betas.size(), 1u);
  EXPECT_EQ(g.betas[0], std::make_pair(0.1, 0.5));
  EXPECT_EQ(g.seeds, (std::vector<std::uint64_t>{4, 5}));
  EXPECT_EQ(g.data.n_train, 10u);
  EXPECT_EQ(g.weak_epochs, 2u);
  EXPECT_EQ(g.run.plan.height, 32u);

  SweepGrid d = parse_sweep_grid("{}");
  EXPECT_EQ(d.alphas, (std::vector<double>{0, 0.5, 1}));
  EXPECT_EQ(d.betas.size(), 4u);
  EXPECT_THROW(parse_sweep_grid(R"({"gammas": [1]})"), ConfigError);
  EXPECT_THROW(parse_sweep_grid(R"({"betas": [[0.1]]})"), ConfigError);
  EXPECT_THROW(parse_sweep_grid(R"({"seeds": "one"})"), ConfigError);
}

SweepGrid tiny_grid() {
  SweepGrid g;
  g.data.n_train = 6;
  g.data.n_test = 2;
  g.run.plan.height = g.run.plan.width = 32;
  g.run.model.backbone_channels = {8, 8, 4};
  g.run.model.stem_channels = 4;
  g.run.model.encoder.hidden_dim = 8;
  g.run.model.encoder.ffn_dim = 16;
  g.weak_epochs = 1;
  g.semi_epochs = 1;
  return g;
}

TEST(Sweep, AlphaGridGivesOneRowPerSeedPlusMedians) {
  SweepGrid g = tiny_grid();
  g.betas.clear();
  std::size_t reported = 0;
  SweepResult r = run_sweep(g, [&](const SweepRow&) { ++reported; });
  ASSERT_EQ(r.rows.size(), 12u);
  EXPECT_EQ(reported, 9u);
  for (std::size_t k = 0; k < 3; ++k) {
    const double alpha = g.alphas[k];
    std::vector<double> dice;
    for (std::size_t s = 0; s < 3; ++s) {
      const SweepRow& row = r.rows[4 * k + s];
      EXPECT_EQ(row.study, "alpha");
      EXPECT_EQ(row.alpha, alpha);
      EXPECT_EQ(row.seed, g.seeds[s]);
      EXPECT_EQ(row.is_default, alpha == 0.5);
      dice.push_back(row.mdice);
    }
    const SweepRow& m = r.rows[4 * k + 3];
    EXPECT_FALSE(m.seed.has_value());
    EXPECT_EQ(m.mdice, median_of(dice));
    EXPECT_EQ(r.median("alpha", alpha), &m);
  }
}

TEST(Sweep, BetaStudyAndCsv) {
  SweepGrid g = tiny_grid();
  g.alphas = {0.5};
  g.betas = {{0.5, 0.5}, {0.1, 0.5}};
  g.seeds = {2};
  SweepResult r = run_sweep(g);
  ASSERT_EQ(r.rows.size(), 2u + 2u * 2u);
  const SweepRow* weighted = r.median("beta", 0.5, std::make_pair(0.1, 0.5));
  ASSERT_NE(weighted, nullptr);
  EXPECT_TRUE(weighted->is_default);
  EXPECT_FALSE(r.median("beta", 0.5, std::make_pair(0.5, 0.5))->is_default);

  const auto path = std::filesystem::temp_directory_path() / "wsds_sweep.csv";
  r.write_csv(path);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "study,alpha,beta1,beta2,seed,mdice,miou,false_positive_rate,is_default");
  std::getline(in, line);
  EXPECT_EQ(line.rfind("alpha,0.5,,,2,", 0), 0u) << line;
  std::size_t rows = 1, medians = 0;
  while (std::getline(in, line)) {
    ++rows;
    medians += line.find(",median,") != std::string::npos;
  }
  EXPECT_EQ(rows, r.rows.size());
  EXPECT_EQ(medians, 3u);
}

TEST(Sweep, SameGridSameRows) {
  SweepGrid g = tiny_grid();
  g.alphas = {0.5};
  g.betas.clear();
  g.seeds = {3};
  EXPECT_EQ(run_sweep(g).rows.front().mdice, run_sweep(g).rows.front().mdice);
}

// ---------------------------------------------------------------------------

TEST(GradientError, FlagsAWrongBackwardRule) {
  Rng rng(1);
  Tensor x({5});
  for (double& v : x.data()) v = rng.uniform(-1, 1);
  auto good = [](Tape&, const std::vector<Var>& v) { return sum(mul(v[0], v[0])); };
  EXPECT_LT(gradient_error(good, {x}), 1e-8);
  // detach hides one factor from backward, halving the analytic gradient.
  auto bad = [](Tape&, const std::vector<Var>& v) { return sum(mul(v[0], detach(v[0]))); };
  EXPECT_NEAR(gradient_error(bad, {x}), 0.5, 1e-6);
}

TEST(GradientSuite, SmallRunPasses) {
  GradCheckOptions opt;
  opt.instances = 4;
  std::size_t seen = 0;
  opt.on_result = [&](const GradCheckResult&) { ++seen; };
  const auto results = run_gradient_suite(opt);
  EXPECT_EQ(seen, results.size());
  EXPECT_GE(results.size(), 30u);
  for (const GradCheckResult& r : results) {
    EXPECT_TRUE(r.passed()) << r.name << " error " << r.max_error;
  }
}

}  // namespace
}  // namespace wsds
