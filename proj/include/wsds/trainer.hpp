#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "wsds/data.hpp"
#include "wsds/losses.hpp"
#include "wsds/network.hpp"

namespace wsds {

struct SgdConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  std::size_t batch_size = 4;
  /// Multiplier applied to the learning rate after every epoch.
  double lr_decay = 0.95;

  /// Throws ConfigError unless all values are non-negative, momentum < 1,
  /// batch_size > 0 and lr_decay in (0, 1].
  void validate() const;
};

enum class Stage { kWeak, kSemi };

struct StagePlan {
  Stage stage = Stage::kWeak;
  std::size_t epochs = 30;
  double alpha = kDefaultAlpha;
  double beta1 = kDefaultBeta1;
  double beta2 = kDefaultBeta2;
  /// Teacher weights are initialized from `seed`, the student from seed + 1.
  std::uint64_t seed = 1;
  std::size_t height = 64;
  std::size_t width = 64;

  void validate() const;
};

/// v <- momentum * v + grad + weight_decay * param; param <- param - lr * v.
/// Missing velocity entries start at zero. Throws NumericsError, leaving
/// every parameter untouched, if any gradient is non-finite.
void sgd_step(ParamTable& params, const ParamTable& grads, ParamTable& velocity,
              const SgdConfig& cfg, double learning_rate);

struct MetricsRow {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double l_p = 0, l_f = 0, l_weak = 0, l_c = 0, total = 0;
  std::string branch;
};

class TrainingLog {
 public:
  void add(std::size_t epoch, std::size_t step, const LossReport& report);
  const std::vector<MetricsRow>& rows() const { return rows_; }
  /// Mean total loss of each epoch, in epoch order.
  std::vector<double> epoch_means() const;
  /// Number of steps that ran under `branch` ("labeled" or "unlabeled").
  std::size_t branch_count(const std::string& branch) const;
  /// Header: epoch,step,l_p,l_f,l_weak,l_c,total,branch
  void write_csv(const std::filesystem::path& path) const;

 private:
  std::vector<MetricsRow> rows_;
};

/// Called after each epoch with (epoch, mean total loss).
using EpochCallback = std::function<void(std::size_t, double)>;

/// Trains a fresh teacher on the labeled train samples with L_weak.
/// Throws ConfigError when the dataset has no labeled train sample.
SegModel train_weak_stage(const Dataset& dataset, const ModelConfig& model, const StagePlan& plan,
                          const SgdConfig& sgd, TrainingLog* log = nullptr,
                          const EpochCallback& on_epoch = {});

/// Teacher predictions for every train sample, keyed by sample id.
using PseudoLabelCache = std::map<std::string, Tensor>;

PseudoLabelCache generate_pseudo_labels(const SegModel& teacher, const Dataset& dataset);
void save_pseudo_labels(const PseudoLabelCache& cache, const std::filesystem::path& path);
PseudoLabelCache load_pseudo_labels(const std::filesystem::path& path);

/// Trains a fresh student (seed + 1) over all train samples with the gated
/// semi-supervised loss against the frozen cache. Throws ConfigError if the
/// cache misses a train sample or holds a map of the wrong size.
SegModel train_semi_stage(const Dataset& dataset, const PseudoLabelCache& cache,
                          const ModelConfig& model, const StagePlan& plan, const SgdConfig& sgd,
                          TrainingLog* log = nullptr, const EpochCallback& on_epoch = {});

}  // namespace wsds
