#include "wsds/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "wsds/checkpoint.hpp"
#include "wsds/errors.hpp"

namespace wsds {

void SgdConfig::validate() const {
  if (!(learning_rate >= 0.0) || !(weight_decay >= 0.0)) {
    throw ConfigError("learning rate and weight decay must be non-negative");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("lr_decay must lie in (0, 1]");
}

void StagePlan::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (!(alpha >= 0.0 && beta1 >= 0.0 && beta2 >= 0.0)) {
    throw ConfigError("loss weights must be non-negative");
  }
  if (height == 0 || width == 0 || height % 16 != 0 || width % 16 != 0) {
    throw ConfigError("input size must be a positive multiple of 16");
  }
}

void sgd_step(ParamTable& params, const ParamTable& grads, ParamTable& velocity,
              const SgdConfig& cfg, double learning_rate) {
  for (const auto& [name, g] : grads) {
    if (!g.all_finite()) throw NumericsError("non-finite gradient for " + name);
    auto it = params.find(name);
    if (it == params.end() || it->second.shape() != g.shape()) {
      throw ShapeError("gradient " + name + " does not match a parameter");
    }
  }
  for (auto& [name, p] : params) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    const Tensor& g = git->second;
    auto [vit, inserted] = velocity.try_emplace(name, p.shape(), 0.0);
    Tensor& v = vit->second;
    for (std::size_t i = 0; i < p.numel(); ++i) {
      v[i] = cfg.momentum * v[i] + g[i] + cfg.weight_decay * p[i];
      p[i] -= learning_rate * v[i];
    }
  }
}

// ---------------------------------------------------------------------------
// Log.

void TrainingLog::add(std::size_t epoch, std::size_t step, const LossReport& report) {
  const auto& c = report.components;
  rows_.push_back({epoch, step, c.at("l_p"), c.at("l_f"), c.at("l_weak"), c.at("l_c"),
                   report.total, report.branch()});
}

std::vector<double> TrainingLog::epoch_means() const {
  std::vector<double> sums, counts;
  for (const MetricsRow& r : rows_) {
    if (r.epoch >= sums.size()) {
      sums.resize(r.epoch + 1, 0.0);
      counts.resize(r.epoch + 1, 0.0);
    }
    sums[r.epoch] += r.total;
    counts[r.epoch] += 1.0;
  }
  for (std::size_t e = 0; e < sums.size(); ++e) sums[e] = counts[e] > 0 ? sums[e] / counts[e] : 0;
  return sums;
}

std::size_t TrainingLog::branch_count(const std::string& branch) const {
  std::size_t n = 0;
  for (const MetricsRow& r : rows_) n += r.branch == branch;
  return n;
}

void TrainingLog::write_csv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,step,l_p,l_f,l_weak,l_c,total,branch\n";
  char buf[256];
  for (const MetricsRow& r : rows_) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g,%.17g,%.17g,%.17g,%.17g,", r.epoch, r.step, r.l_p,
                  r.l_f, r.l_weak, r.l_c, r.total);
    out << buf << r.branch << '\n';
  }
}

// ---------------------------------------------------------------------------
// Stages.

namespace {

// Separate streams for batch order and dropout, both fixed by the run seed.
constexpr std::uint64_t kShuffleStream = 0x5eed0001;
constexpr std::uint64_t kDropoutStream = 0x5eed0002;

void check_size(const Sample& s, const StagePlan& plan) {
  if (s.image.dim(1) != plan.height || s.image.dim(2) != plan.width) {
    throw ShapeError("sample " + s.id + " is " + shape_str(s.image.shape()) +
                     " but the plan trains at " + std::to_string(plan.height) + "x" +
                     std::to_string(plan.width));
  }
}

using BatchLoss = std::function<LossResult(const std::vector<Var>& preds,
                                           const std::vector<const Sample*>& batch)>;

SegModel run_stage(const std::vector<const Sample*>& pool, ModelConfig model_cfg,
                   std::uint64_t init_seed, ModelRole role, const StagePlan& plan,
                   const SgdConfig& sgd, const BatchLoss& loss_fn, TrainingLog* log,
                   const EpochCallback& on_epoch) {
  SegModel model(std::move(model_cfg), init_seed, role);
  ParamTable velocity;
  Rng order_rng(plan.seed ^ kShuffleStream ^ (role == ModelRole::kStudent ? 0xff : 0));
  Rng dropout_rng(plan.seed ^ kDropoutStream ^ (role == ModelRole::kStudent ? 0xff : 0));
  std::vector<std::size_t> order(pool.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  double lr = sgd.learning_rate;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < plan.epochs; ++epoch) {
    shuffle(order, order_rng);
    double epoch_sum = 0.0;
    std::size_t epoch_steps = 0;
    for (std::size_t start = 0; start < order.size(); start += sgd.batch_size) {
      const std::size_t end = std::min(order.size(), start + sgd.batch_size);
      std::vector<const Sample*> batch;
      for (std::size_t k = start; k < end; ++k) batch.push_back(pool[order[k]]);

      Tape tape;
      BoundParams params(tape, model.params(), true);
      std::vector<Var> preds;
      for (const Sample* s : batch) {
        preds.push_back(predict(params, tape.constant(s->image), model.config(), true, dropout_rng));
      }
      LossResult loss = loss_fn(preds, batch);
      tape.backward(loss.total);
      sgd_step(model.params(), params.gradients(), velocity, sgd, lr);
      if (log) log->add(epoch, step, loss.report);
      epoch_sum += loss.report.total;
      ++epoch_steps;
      ++step;
    }
    if (on_epoch) on_epoch(epoch, epoch_sum / static_cast<double>(epoch_steps));
    lr *= sgd.lr_decay;
  }
  return model;
}

}  // namespace

SegModel train_weak_stage(const Dataset& dataset, const ModelConfig& model, const StagePlan& plan,
                          const SgdConfig& sgd, TrainingLog* log, const EpochCallback& on_epoch) {
  plan.validate();
  sgd.validate();
  std::vector<const Sample*> pool = dataset.labeled();
  if (pool.empty()) throw ConfigError("the weak stage needs at least one labeled train sample");
  for (const Sample* s : pool) check_size(*s, plan);
  auto loss_fn = [&plan](const std::vector<Var>& preds, const std::vector<const Sample*>& batch) {
    std::vector<const WeakLabelMap*> labels;
    for (const Sample* s : batch) labels.push_back(&*s->trimap);
    return weak_loss(preds, labels, plan.alpha);
  };
  return run_stage(pool, model, plan.seed, ModelRole::kTeacher, plan, sgd, loss_fn, log, on_epoch);
}

PseudoLabelCache generate_pseudo_labels(const SegModel& teacher, const Dataset& dataset) {
  PseudoLabelCache cache;
  for (const Sample* s : dataset.select(Split::kTrain)) cache.emplace(s->id, predict(teacher, s->image));
  return cache;
}

void save_pseudo_labels(const PseudoLabelCache& cache, const std::filesystem::path& path) {
  write_tensor_table(path, cache);
}

PseudoLabelCache load_pseudo_labels(const std::filesystem::path& path) {
  return read_tensor_table(path);
}

SegModel train_semi_stage(const Dataset& dataset, const PseudoLabelCache& cache,
                          const ModelConfig& model, const StagePlan& plan, const SgdConfig& sgd,
                          TrainingLog* log, const EpochCallback& on_epoch) {
  plan.validate();
  sgd.validate();
  std::vector<const Sample*> pool = dataset.select(Split::kTrain);
  if (pool.empty()) throw ConfigError("the semi stage needs train samples");
  for (const Sample* s : pool) {
    check_size(*s, plan);
    auto it = cache.find(s->id);
    if (it == cache.end()) throw ConfigError("pseudo-label cache has no entry for " + s->id);
    if (it->second.shape() != Shape{1, plan.height, plan.width}) {
      throw ConfigError("pseudo-label for " + s->id + " has shape " +
                        shape_str(it->second.shape()));
    }
  }
  auto loss_fn = [&](const std::vector<Var>& preds, const std::vector<const Sample*>& batch) {
    std::vector<Tensor> targets;
    std::vector<const WeakLabelMap*> labels;
    for (const Sample* s : batch) {
      targets.push_back(cache.at(s->id));
      labels.push_back(s->trimap ? &*s->trimap : nullptr);
    }
    return semi_loss(preds, targets, labels, plan.alpha, plan.beta1, plan.beta2);
  };
  return run_stage(pool, model, plan.seed + 1, ModelRole::kStudent, plan, sgd, loss_fn, log,
                   on_epoch);
}

}  // namespace wsds
