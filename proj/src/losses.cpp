#include "wsds/losses.hpp"

#include "wsds/errors.hpp"
#include "wsds/ops.hpp"

namespace wsds {

namespace {

void check_pred(const Var& pred, const WeakLabelMap& labels) {
  if (pred.shape() != Shape{1, labels.height(), labels.width()}) {
    throw ShapeError("prediction " + shape_str(pred.shape()) + " does not match label map " +
                     shape_str({1, labels.height(), labels.width()}));
  }
}

Var zero(Tape& tape) { return tape.constant(Tensor::scalar(0.0)); }

Var batch_mean(const std::vector<Var>& terms, Tape& tape) {
  if (terms.empty()) return zero(tape);
  Var acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return scale(acc, 1.0 / static_cast<double>(terms.size()));
}

void check_batch(std::size_t preds, std::size_t other) {
  if (preds == 0) throw ShapeError("empty batch");
  if (preds != other) throw ShapeError("batch lists differ in length");
}

}  // namespace

Var partial_ce(const Var& pred, const WeakLabelMap& labels) {
  check_pred(pred, labels);
  Tape& tape = pred.tape();
  const std::size_t n = labels.labeled_count();
  if (n == 0) return zero(tape);
  const Tensor fg = labels.foreground_mask();
  Tensor bg = labels.labeled_mask();
  for (std::size_t i = 0; i < bg.numel(); ++i) bg[i] -= fg[i];
  Var fg_term = sum(mul(log_clamped(pred), tape.constant(fg)));
  Var bg_term = sum(mul(log_clamped(1.0 - pred), tape.constant(bg)));
  return scale(add(fg_term, bg_term), -1.0 / static_cast<double>(n));
}

Var sparse_foreground_loss(const Var& pred, const WeakLabelMap& labels) {
  check_pred(pred, labels);
  Tape& tape = pred.tape();
  const std::size_t n = labels.foreground_count();
  if (n == 0) return zero(tape);
  Var fg_term = sum(mul(log_clamped(pred), tape.constant(labels.foreground_mask())));
  return scale(fg_term, -1.0 / static_cast<double>(n));
}

LossResult weak_loss(const std::vector<Var>& preds, const std::vector<const WeakLabelMap*>& labels,
                     double alpha) {
  check_batch(preds.size(), labels.size());
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be non-negative");
  std::vector<Var> lp, lf;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (!labels[i]) throw ShapeError("weak_loss needs a label map for every sample");
    lp.push_back(partial_ce(preds[i], *labels[i]));
    lf.push_back(sparse_foreground_loss(preds[i], *labels[i]));
  }
  Tape& tape = preds.front().tape();
  Var l_p = batch_mean(lp, tape);
  Var l_f = batch_mean(lf, tape);
  Var total = add(l_p, scale(l_f, alpha));
  LossResult r{total, {}};
  r.report.total = total.value().item();
  r.report.batch_had_labels = true;
  r.report.components = {{"l_p", l_p.value().item()},
                         {"l_f", l_f.value().item()},
                         {"l_weak", r.report.total},
                         {"l_c", 0.0}};
  return r;
}

LossResult weak_loss(const Var& pred, const WeakLabelMap& labels, double alpha) {
  return weak_loss(std::vector<Var>{pred}, std::vector<const WeakLabelMap*>{&labels}, alpha);
}

Var consistency_loss(const std::vector<Var>& student, const std::vector<Tensor>& teacher) {
  check_batch(student.size(), teacher.size());
  Tape& tape = student.front().tape();
  std::vector<Var> terms;
  for (std::size_t i = 0; i < student.size(); ++i) {
    if (student[i].shape() != teacher[i].shape()) {
      throw ShapeError("student " + shape_str(student[i].shape()) + " vs teacher " +
                       shape_str(teacher[i].shape()));
    }
    terms.push_back(mean(abs(sub(student[i], tape.constant(teacher[i])))));
  }
  return batch_mean(terms, tape);
}

Var consistency_loss(const Var& student, const Tensor& teacher) {
  return consistency_loss(std::vector<Var>{student}, std::vector<Tensor>{teacher});
}

LossResult semi_loss(const std::vector<Var>& preds, const std::vector<Tensor>& teacher,
                     const std::vector<const WeakLabelMap*>& labels, double alpha, double beta1,
                     double beta2) {
  check_batch(preds.size(), teacher.size());
  check_batch(preds.size(), labels.size());
  if (!(beta1 >= 0.0 && beta2 >= 0.0)) throw ConfigError("beta weights must be non-negative");
  Var l_c = consistency_loss(preds, teacher);
  const double lc = l_c.value().item();

  std::vector<Var> labeled_preds;
  std::vector<const WeakLabelMap*> labeled_maps;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (labels[i]) {
      labeled_preds.push_back(preds[i]);
      labeled_maps.push_back(labels[i]);
    }
  }
  if (labeled_preds.empty()) {
    Var total = scale(l_c, beta2);
    LossReport report{total.value().item(),
                      {{"l_p", 0.0}, {"l_f", 0.0}, {"l_weak", 0.0}, {"l_c", lc}},
                      false};
    return {total, report};
  }
  LossResult weak = weak_loss(labeled_preds, labeled_maps, alpha);
  Var total = add(weak.total, scale(l_c, beta1));
  LossResult r{total, weak.report};
  r.report.components["l_c"] = lc;
  r.report.total = total.value().item();
  return r;
}

}  // namespace wsds
