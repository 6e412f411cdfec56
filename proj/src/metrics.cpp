#include "wsds/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "wsds/checkpoint.hpp"
#include "wsds/errors.hpp"

namespace wsds {

Tensor binarize(const Tensor& prob, double threshold) {
  Tensor out(prob.shape());
  for (std::size_t i = 0; i < prob.numel(); ++i) out[i] = prob[i] >= threshold ? 1.0 : 0.0;
  return out;
}

namespace {

struct Counts {
  std::size_t pred = 0, gt = 0, both = 0;
};

Counts count(const Tensor& p, const Tensor& g) {
  if (p.shape() != g.shape()) {
    throw ShapeError("mask shapes differ: " + shape_str(p.shape()) + " vs " + shape_str(g.shape()));
  }
  Counts c;
  for (std::size_t i = 0; i < p.numel(); ++i) {
    const bool a = p[i] >= 0.5, b = g[i] >= 0.5;
    c.pred += a;
    c.gt += b;
    c.both += a && b;
  }
  return c;
}

}  // namespace

double dice(const Tensor& pred_mask, const Tensor& gt_mask) {
  const Counts c = count(pred_mask, gt_mask);
  if (c.pred + c.gt == 0) return 1.0;
  return 2.0 * static_cast<double>(c.both) / static_cast<double>(c.pred + c.gt);
}

double iou(const Tensor& pred_mask, const Tensor& gt_mask) {
  const Counts c = count(pred_mask, gt_mask);
  const std::size_t uni = c.pred + c.gt - c.both;
  if (uni == 0) return 1.0;
  return static_cast<double>(c.both) / static_cast<double>(uni);
}

double false_positive_rate(const Tensor& pred_mask, const Tensor& gt_mask) {
  const Counts c = count(pred_mask, gt_mask);
  const std::size_t background = pred_mask.numel() - c.gt;
  if (background == 0) return 0.0;
  return static_cast<double>(c.pred - c.both) / static_cast<double>(background);
}

void EvalReport::write_csv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  char buf[128];
  out << "id,dice,iou\n";
  for (const ImageScore& s : images) {
    std::snprintf(buf, sizeof buf, ",%.17g,%.17g\n", s.dice, s.iou);
    out << s.id << buf;
  }
  std::snprintf(buf, sizeof buf, "mean,%.17g,%.17g\n", mdice, miou);
  out << buf;
}

EvalReport evaluate(const Predictor& predictor, const Dataset& dataset, Split split,
                    double threshold, const std::string& model_id) {
  EvalReport report;
  report.threshold = threshold;
  report.model_id = model_id;
  for (const Sample* s : dataset.select(split)) {
    if (!s->gt) throw DataError("sample " + s->id + " has no dense mask to evaluate against");
    const Tensor mask = binarize(predictor(*s), threshold);
    report.images.push_back(
        {s->id, dice(mask, *s->gt), iou(mask, *s->gt), false_positive_rate(mask, *s->gt)});
  }
  std::sort(report.images.begin(), report.images.end(),
            [](const ImageScore& a, const ImageScore& b) { return a.id < b.id; });
  for (const ImageScore& s : report.images) {
    report.mdice += s.dice;
    report.miou += s.iou;
    report.mean_false_positive_rate += s.false_positive_rate;
  }
  if (!report.images.empty()) {
    const double n = static_cast<double>(report.images.size());
    report.mdice /= n;
    report.miou /= n;
    report.mean_false_positive_rate /= n;
  }
  return report;
}

EvalReport evaluate(const SegModel& model, const Dataset& dataset, Split split, double threshold) {
  return evaluate([&model](const Sample& s) { return predict(model, s.image); }, dataset, split,
                  threshold, model_id(model));
}

}  // namespace wsds
