#pragma once

#include <map>
#include <string>
#include <vector>

#include "wsds/autodiff.hpp"
#include "wsds/weak_label.hpp"

namespace wsds {

inline constexpr double kDefaultAlpha = 0.5;
inline constexpr double kDefaultBeta1 = 0.1;
inline constexpr double kDefaultBeta2 = 0.5;

/// Values of one loss evaluation. Components are l_p, l_f, l_weak and l_c.
struct LossReport {
  double total = 0.0;
  std::map<std::string, double> components;
  bool batch_had_labels = false;

  /// "labeled" or "unlabeled", the gating branch that produced `total`.
  std::string branch() const { return batch_had_labels ? "labeled" : "unlabeled"; }
};

/// Differentiable total plus its report.
struct LossResult {
  Var total;
  LossReport report;
};

/// Binary cross-entropy over the labeled pixels of one prediction [1,H,W];
/// 0 when nothing is labeled.
Var partial_ce(const Var& pred, const WeakLabelMap& labels);

/// -mean(log pred) over the foreground scribble; 0 without foreground pixels.
Var sparse_foreground_loss(const Var& pred, const WeakLabelMap& labels);

/// l_weak = l_p + alpha * l_f, each term averaged over the batch.
LossResult weak_loss(const std::vector<Var>& preds, const std::vector<const WeakLabelMap*>& labels,
                     double alpha = kDefaultAlpha);
LossResult weak_loss(const Var& pred, const WeakLabelMap& labels, double alpha = kDefaultAlpha);

/// Mean |student - teacher| per image, averaged over the batch. The teacher
/// maps are plain tensors, so no gradient can reach them.
Var consistency_loss(const std::vector<Var>& student, const std::vector<Tensor>& teacher);
Var consistency_loss(const Var& student, const Tensor& teacher);

/// Batch-gated semi-supervised loss. `labels[i]` is null for unlabeled
/// samples. With any labeled sample: l_weak(labeled) + beta1 * l_c(all);
/// otherwise beta2 * l_c(all).
LossResult semi_loss(const std::vector<Var>& preds, const std::vector<Tensor>& teacher,
                     const std::vector<const WeakLabelMap*>& labels, double alpha = kDefaultAlpha,
                     double beta1 = kDefaultBeta1, double beta2 = kDefaultBeta2);

}  // namespace wsds
