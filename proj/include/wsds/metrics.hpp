#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "wsds/data.hpp"
#include "wsds/network.hpp"

namespace wsds {

inline constexpr double kDefaultThreshold = 0.5;

/// 1 where prob >= threshold (ties count as foreground), else 0.
Tensor binarize(const Tensor& prob, double threshold = kDefaultThreshold);

/// 2|P and G| / (|P| + |G|) on binary masks; 1 when both are empty.
double dice(const Tensor& pred_mask, const Tensor& gt_mask);
/// |P and G| / |P or G| on binary masks; 1 when both are empty.
double iou(const Tensor& pred_mask, const Tensor& gt_mask);
/// Share of ground-truth background pixels predicted as foreground; 0 when
/// the mask has no background.
double false_positive_rate(const Tensor& pred_mask, const Tensor& gt_mask);

struct ImageScore {
  std::string id;
  double dice = 0.0;
  double iou = 0.0;
  double false_positive_rate = 0.0;
};

struct EvalReport {
  std::vector<ImageScore> images;  // sorted by id
  double mdice = 0.0;
  double miou = 0.0;
  double mean_false_positive_rate = 0.0;
  double threshold = kDefaultThreshold;
  std::string model_id;

  /// Header: id,dice,iou; a closing "mean" row holds mDice and mIoU.
  void write_csv(const std::filesystem::path& path) const;
};

/// Probability map [1,H,W] for a sample.
using Predictor = std::function<Tensor(const Sample&)>;

/// Scores every sample of `split`. Throws DataError if one lacks a dense mask.
EvalReport evaluate(const Predictor& predictor, const Dataset& dataset, Split split,
                    double threshold = kDefaultThreshold, const std::string& model_id = "");
EvalReport evaluate(const SegModel& model, const Dataset& dataset, Split split,
                    double threshold = kDefaultThreshold);

}  // namespace wsds
