#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "wsds/config.hpp"
#include "wsds/data.hpp"

namespace wsds {

/// Hyperparameter studies on synthetic data. Each seed draws its own dataset
/// (`data.seed` is replaced by the run seed, its size by the plan's) and
/// trains with `plan.seed` set to it. The alpha study scores WEAK-stage
/// teachers; the beta study scores students trained from the teacher at the
/// default alpha.
struct SweepGrid {
  std::vector<double> alphas{0.0, 0.5, 1.0};
  std::vector<std::pair<double, double>> betas{{0.5, 0.5}, {0.3, 0.5}, {0.1, 0.5}, {0.0, 0.5}};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  SynthConfig data;
  /// Defaults for every run; plan.alpha/beta1/beta2 mark the default config.
  RunConfig run;
  std::size_t weak_epochs = 30;
  std::size_t semi_epochs = 30;
};

struct SweepRow {
  std::string study;  // "alpha" or "beta"
  double alpha = 0.0;
  std::optional<double> beta1, beta2;  // empty for the alpha study
  std::optional<std::uint64_t> seed;   // empty for median rows
  double mdice = 0.0;
  double miou = 0.0;
  double false_positive_rate = 0.0;
  bool is_default = false;
};

struct SweepResult {
  /// Per config: one row per seed, then its median row.
  std::vector<SweepRow> rows;

  /// Header: study,alpha,beta1,beta2,seed,mdice,miou,false_positive_rate,is_default
  /// Median rows carry "median" in the seed column.
  void write_csv(const std::filesystem::path& path) const;
  /// The median row of a config, or nullptr.
  const SweepRow* median(const std::string& study, double alpha,
                         std::optional<std::pair<double, double>> betas = std::nullopt) const;
};

/// Median of a non-empty list; the mean of the middle pair for even sizes.
double median_of(std::vector<double> values);

using SweepProgress = std::function<void(const SweepRow&)>;

SweepResult run_sweep(const SweepGrid& grid, const SweepProgress& progress = {});

/// JSON object with optional keys alphas ([x]), betas ([[b1, b2]]), seeds,
/// n_train, n_test, labeled_fraction, weak_epochs, semi_epochs and
/// config (a run config object, see parse_run_config).
SweepGrid parse_sweep_grid(const std::string& json_text);
SweepGrid load_sweep_grid(const std::filesystem::path& path);

}  // namespace wsds
