#include "wsds/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "wsds/losses.hpp"
#include "wsds/network.hpp"
#include "wsds/ops.hpp"

namespace wsds {

namespace {

double evaluate_at(const ScalarFunction& fn, const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Var> vars;
  for (const Tensor& t : inputs) vars.push_back(tape.constant(t));
  return fn(tape, vars).value().item();
}

double relative_error(const Tensor& a, const Tensor& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-8});
}

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Values in [lo, hi] kept at least `gap` away from every kink in `kinks`.
Tensor away_from(Shape shape, Rng& rng, double lo, double hi, std::vector<double> kinks,
                 double gap) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) {
    do {
      v = rng.uniform(lo, hi);
    } while (std::any_of(kinks.begin(), kinks.end(),
                         [&](double k) { return std::abs(v - k) < gap; }));
  }
  return t;
}

// Collapses any output to a scalar through fixed random weights.
Var project(const Var& out, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(out, out.tape().constant(random_tensor(out.shape(), rng))));
}

WeakLabelMap random_trimap(std::size_t h, std::size_t w, Rng& rng) {
  WeakLabelMap m(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double u = rng.uniform();
      m.set(y, x, u < 0.3 ? WeakLabel::kForeground
                          : (u < 0.6 ? WeakLabel::kBackground : WeakLabel::kUnknown));
    }
  m.set(0, 0, WeakLabel::kForeground);
  m.set(0, 1, WeakLabel::kBackground);
  return m;
}

struct Instance {
  ScalarFunction fn;
  std::vector<Tensor> inputs;
};

using Builder = std::function<Instance(std::size_t trial, Rng& rng)>;

const LevelShapes kTinyShapes{{{2, 2}, {4, 4}, {8, 8}}};

ModelConfig tiny_model() {
  ModelConfig m;
  m.backbone_channels = {8, 8, 4};
  m.stem_channels = 4;
  m.encoder.hidden_dim = 8;
  m.encoder.heads = 2;
  m.encoder.points = 2;
  m.encoder.ffn_dim = 16;
  return m;
}

// Random weights everywhere, so sampling offsets and PReLU inputs are generic.
ParamTable random_params(const ModelConfig& cfg, std::uint64_t seed) {
  SegModel model(cfg, seed);
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  ParamTable params = model.params();
  for (auto& [name, t] : params)
    for (double& v : t.data()) v += rng.uniform(-0.3, 0.3);
  return params;
}

// Directional derivative along a random direction for each parameter tensor.
double model_parameter_error(std::uint64_t seed, double h) {
  const ModelConfig cfg = tiny_model();
  const ParamTable base = random_params(cfg, seed);
  Rng rng(seed + 1);
  const Tensor image = random_tensor({3, 32, 32}, rng, 0.0, 1.0);
  const Tensor weights = random_tensor({1, 32, 32}, rng);

  auto loss_of = [&](const ParamTable& params, ParamTable* grads) {
    Tape tape;
    BoundParams p(tape, params, grads != nullptr);
    Rng unused(0);
    Var loss = sum(mul(predict(p, tape.constant(image), cfg, false, unused),
                       tape.constant(weights)));
    if (grads) {
      tape.backward(loss);
      *grads = p.gradients();
    }
    return loss.value().item();
  };
  ParamTable grads;
  loss_of(base, &grads);
  double worst = 0.0;
  for (const auto& [name, value] : base) {
    const Tensor dir = random_tensor(value.shape(), rng);
    double analytic = 0.0;
    for (std::size_t i = 0; i < dir.numel(); ++i) analytic += grads.at(name)[i] * dir[i];
    ParamTable plus = base, minus = base;
    for (std::size_t i = 0; i < dir.numel(); ++i) {
      plus.at(name)[i] += h * dir[i];
      minus.at(name)[i] -= h * dir[i];
    }
    const double numeric = (loss_of(plus, nullptr) - loss_of(minus, nullptr)) / (2.0 * h);
    worst = std::max(worst, std::abs(analytic - numeric) /
                                std::max({std::abs(analytic), std::abs(numeric), 1e-8}));
  }
  return worst;
}

struct Case {
  std::string name;
  std::size_t instances;
  double tolerance;
  Builder build;
};

std::vector<Case> op_cases(std::size_t n) {
  std::vector<Case> cases;
  auto unary = [&](std::string name, std::function<Var(const Var&)> op, double lo, double hi,
                   std::vector<double> kinks = {}) {
    cases.push_back({std::move(name), n, 1e-4, [=](std::size_t trial, Rng& rng) {
                       return Instance{[=](Tape&, const std::vector<Var>& v) {
                                         return project(op(v[0]), 100 + trial);
                                       },
                                       {away_from({3, 4}, rng, lo, hi, kinks, 1e-3)}};
                     }});
  };
  auto binary = [&](std::string name, std::function<Var(const Var&, const Var&)> op) {
    cases.push_back({std::move(name), n, 1e-4, [=](std::size_t trial, Rng& rng) {
                       return Instance{[=](Tape&, const std::vector<Var>& v) {
                                         return project(op(v[0], v[1]), 200 + trial);
                                       },
                                       {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)}};
                     }});
  };
  binary("add", [](const Var& a, const Var& b) { return add(a, b); });
  binary("sub", [](const Var& a, const Var& b) { return sub(a, b); });
  binary("mul", [](const Var& a, const Var& b) { return mul(a, b); });
  unary("scale", [](const Var& a) { return scale(a, -2.5); }, -1, 1);
  unary("add_scalar", [](const Var& a) { return add_scalar(a, 0.7); }, -1, 1);
  unary("abs", [](const Var& a) { return abs(a); }, -1, 1, {0.0});
  unary("log_clamped", [](const Var& a) { return log_clamped(a); }, 0.01, 0.99);
  unary("sigmoid", [](const Var& a) { return sigmoid(a); }, -4, 4);
  unary("clamp", [](const Var& a) { return clamp(a, -0.5, 0.5); }, -1, 1, {-0.5, 0.5});
  unary("sum", [](const Var& a) { return sum(a); }, -1, 1);
  unary("mean", [](const Var& a) { return mean(a); }, -1, 1);
  unary("sum_axis", [](const Var& a) { return sum_axis(a, 1); }, -1, 1);

  cases.push_back({"softmax", n, 1e-4, [](std::size_t trial, Rng& rng) {
                     const std::size_t axis = trial % 3;
                     return Instance{[=](Tape&, const std::vector<Var>& v) {
                                       return project(softmax(v[0], axis), 300 + trial);
                                     },
                                     {random_tensor({2, 3, 4}, rng, -2, 2)}};
                   }});
  cases.push_back({"linear", n, 1e-4, [](std::size_t trial, Rng& rng) {
                     return Instance{[=](Tape&, const std::vector<Var>& v) {
                                       return project(linear(v[0], v[1], v[2]), 400 + trial);
                                     },
                                     {random_tensor({4, 3}, rng), random_tensor({3, 5}, rng),
                                      random_tensor({5}, rng)}};
                   }});
  cases.push_back({"conv2d", n, 1e-4, [](std::size_t trial, Rng& rng) {
                     const std::size_t stride = 1 + trial % 2;
                     return Instance{[=](Tape&, const std::vector<Var>& v) {
                                       return project(conv2d(v[0], v[1], v[2], stride, 1),
                                                      500 + trial);
                                     },
                                     {random_tensor({1, 2, 5, 5}, rng),
                                      random_tensor({2, 2, 3, 3}, rng), random_tensor({2}, rng)}};
                   }});
  cases.push_back({"prelu", n, 1e-4, [](std::size_t trial, Rng& rng) {
                     return Instance{[=](Tape&, const std::vector<Var>& v) {
                                       return project(prelu(v[0], v[1]), 600 + trial);
                                     },
                                     {away_from({10}, rng, -1, 1, {0.0}, 1e-3),
                                      random_tensor({1}, rng, 0.0, 0.5)}};
                   }});
  cases.push_back({"layer_norm", n, 1e-4, [](std::size_t trial, Rng& rng) {
                     const std::size_t axis = trial % 2;
                     const Shape s{3, 5};
                     return Instance{[=](Tape&, const std::vector<Var>& v) {
                                       return project(layer_norm(v[0], v[1], v[2], axis),
                                                      700 + trial);
                                     },
                                     {random_tensor(s, rng, -2, 2), random_tensor({s[axis]}, rng),
                                      random_tensor({s[axis]}, rng)}};
                   }});
  cases.push_back({"dropout", n, 1e-4, [](std::size_t trial, Rng& rng) {
                     return Instance{[=](Tape&, const std::vector<Var>& v) {
                                       Rng mask(trial);
                                       return project(dropout(v[0], 0.3, true, mask), 800 + trial);
                                     },
                                     {random_tensor({12}, rng)}};
                   }});
  cases.push_back({"bilinear_sample", n, 1e-4, [](std::size_t trial, Rng& rng) {
                     return Instance{[=](Tape&, const std::vector<Var>& v) {
                                       return project(bilinear_sample(v[0], v[1]), 900 + trial);
                                     },
                                     {random_tensor({2, 4, 5}, rng),
                                      random_tensor({6, 2}, rng, -0.1, 1.1)}};
                   }});
  cases.push_back({"interpolate_bilinear", n, 1e-4, [](std::size_t trial, Rng& rng) {
                     const std::size_t oh = 2 + trial % 5, ow = 3 + trial % 4;
                     return Instance{[=](Tape&, const std::vector<Var>& v) {
                                       return project(interpolate_bilinear(v[0], oh, ow),
                                                      1000 + trial);
                                     },
                                     {random_tensor({2, 3, 4}, rng)}};
                   }});
  cases.push_back({"layout", n, 1e-4, [](std::size_t trial, Rng& rng) {
                     return Instance{[=](Tape&, const std::vector<Var>& v) {
                                       Var s = slice(permute(v[0], {2, 0, 1}), 2, 1, 2);
                                       Var c = concat({v[0], broadcast_to(v[1], {2, 3, 4})}, 1);
                                       Var r = reshape(c, {12, 4});
                                       return add(project(s, 1100 + trial),
                                                  project(transpose(r), 1200 + trial));
                                     },
                                     {random_tensor({2, 3, 4}, rng),
                                      random_tensor({2, 1, 4}, rng)}};
                   }});
  return cases;
}

std::vector<Case> loss_cases(std::size_t n) {
  std::vector<Case> cases;
  auto pred = [](Rng& rng) { return random_tensor({1, 4, 5}, rng, 0.05, 0.95); };
  cases.push_back({"partial_ce", n, 1e-4, [=](std::size_t, Rng& rng) {
                     WeakLabelMap labels = random_trimap(4, 5, rng);
                     return Instance{[=](Tape&, const std::vector<Var>& v) {
                                       return partial_ce(v[0], labels);
                                     },
                                     {pred(rng)}};
                   }});
  cases.push_back({"sparse_foreground_loss", n, 1e-4, [=](std::size_t, Rng& rng) {
                     WeakLabelMap labels = random_trimap(4, 5, rng);
                     return Instance{[=](Tape&, const std::vector<Var>& v) {
                                       return sparse_foreground_loss(v[0], labels);
                                     },
                                     {pred(rng)}};
                   }});
  cases.push_back({"weak_loss", n, 1e-4, [=](std::size_t, Rng& rng) {
                     WeakLabelMap a = random_trimap(4, 5, rng), b = random_trimap(4, 5, rng);
                     return Instance{[=](Tape&, const std::vector<Var>& v) {
                                       return weak_loss({v[0], v[1]}, {&a, &b}).total;
                                     },
                                     {pred(rng), pred(rng)}};
                   }});
  cases.push_back({"consistency_loss", n, 1e-4, [=](std::size_t, Rng& rng) {
                     Tensor teacher = pred(rng);
                     Tensor student = pred(rng);
                     for (std::size_t i = 0; i < student.numel(); ++i) {
                       if (std::abs(student[i] - teacher[i]) < 1e-3) student[i] += 0.01;
                     }
                     return Instance{[=](Tape&, const std::vector<Var>& v) {
                                       return consistency_loss(v[0], teacher);
                                     },
                                     {student}};
                   }});
  cases.push_back({"semi_loss", n, 1e-4, [=](std::size_t trial, Rng& rng) {
                     WeakLabelMap a = random_trimap(4, 5, rng);
                     std::vector<Tensor> teacher{pred(rng), pred(rng)};
                     std::vector<Tensor> preds{pred(rng), pred(rng)};
                     for (std::size_t k = 0; k < 2; ++k)
                       for (std::size_t i = 0; i < preds[k].numel(); ++i)
                         if (std::abs(preds[k][i] - teacher[k][i]) < 1e-3) preds[k][i] += 0.01;
                     const bool labeled = trial % 2 == 0;
                     return Instance{[=](Tape&, const std::vector<Var>& v) {
                                       const WeakLabelMap* first = labeled ? &a : nullptr;
                                       return semi_loss({v[0], v[1]}, teacher, {first, nullptr})
                                           .total;
                                     },
                                     preds};
                   }});
  return cases;
}

std::vector<Case> network_cases(std::size_t n) {
  const ModelConfig cfg = tiny_model();
  const EncoderConfig& e = cfg.encoder;
  const std::size_t tokens = token_count(kTinyShapes);
  const Tensor ref = generate_reference_points(kTinyShapes);
  std::vector<Case> cases;

  cases.push_back({"deformable_attention", n, 1e-4, [=](std::size_t trial, Rng& rng) {
                     const ParamTable params = random_params(cfg, 40 + trial);
                     const std::string pre = "dten.encoder.attn.";
                     return Instance{
                         [=](Tape& tape, const std::vector<Var>& v) {
                           BoundParams p(tape, params, false);
                           AttentionParams ap = AttentionParams::bind(p, "dten.encoder.attn");
                           ap.offset_weight = v[2];
                           ap.weight_weight = v[3];
                           ap.value_weight = v[4];
                           return project(
                               deformable_attention(v[0], v[1], ref, kTinyShapes, ap, e).output,
                               1300 + trial);
                         },
                         {random_tensor({e.hidden_dim, tokens}, rng),
                          random_tensor({e.hidden_dim, tokens}, rng),
                          params.at(pre + "offset.weight"), params.at(pre + "weight.weight"),
                          params.at(pre + "value.weight")}};
                   }});
  cases.push_back({"encoder", n, 1e-4, [=](std::size_t trial, Rng& rng) {
                     const ParamTable params = random_params(cfg, 60 + trial);
                     return Instance{
                         [=](Tape& tape, const std::vector<Var>& v) {
                           BoundParams p(tape, params, false);
                           Rng unused(0);
                           return project(encoder_forward(v[0], v[1], ref, kTinyShapes,
                                                          EncoderParams::bind(p, "dten.encoder"),
                                                          e, false, unused),
                                          1400 + trial);
                         },
                         {random_tensor({e.hidden_dim, tokens}, rng),
                          random_tensor({e.hidden_dim, tokens}, rng)}};
                   }});
  cases.push_back({"fa_block", n, 1e-4, [](std::size_t trial, Rng& rng) {
                     return Instance{[=](Tape& tape, const std::vector<Var>& v) {
                                       FaBlockParams p{v[2], tape.constant(Tensor({3}, 0.1)),
                                                       tape.constant(Tensor({1}, 0.25))};
                                       return project(fa_block(v[0], v[1], p), 1500 + trial);
                                     },
                                     {random_tensor({2, 4, 4}, rng), random_tensor({3, 2, 2}, rng),
                                      random_tensor({3, 2, 3, 3}, rng)}};
                   }});
  cases.push_back({"neck", std::max<std::size_t>(1, n / 4), 1e-3,
                   [=](std::size_t trial, Rng& rng) {
                     const ParamTable params = random_params(cfg, 80 + trial);
                     return Instance{
                         [=](Tape& tape, const std::vector<Var>& v) {
                           BoundParams p(tape, params, false);
                           Rng unused(0);
                           return project(dten_forward(p, MultiScaleFeatures({v[0], v[1], v[2]}),
                                                       cfg, false, unused),
                                          1600 + trial);
                         },
                         {random_tensor({8, 2, 2}, rng), random_tensor({8, 4, 4}, rng),
                          random_tensor({4, 8, 8}, rng)}};
                   }});
  return cases;
}

}  // namespace

double gradient_error(const ScalarFunction& fn, const std::vector<Tensor>& inputs, double h) {
  Tape tape;
  std::vector<Var> vars;
  for (const Tensor& t : inputs) vars.push_back(tape.leaf(t, true));
  tape.backward(fn(tape, vars));

  std::vector<Tensor> shifted = inputs;
  double worst = 0.0;
  for (std::size_t j = 0; j < inputs.size(); ++j) {
    Tensor numeric(inputs[j].shape(), 0.0);
    for (std::size_t i = 0; i < inputs[j].numel(); ++i) {
      const double saved = shifted[j][i];
      shifted[j][i] = saved + h;
      const double up = evaluate_at(fn, shifted);
      shifted[j][i] = saved - h;
      const double down = evaluate_at(fn, shifted);
      shifted[j][i] = saved;
      numeric[i] = (up - down) / (2.0 * h);
    }
    worst = std::max(worst, relative_error(tape.grad_or_zeros(vars[j]), numeric));
  }
  return worst;
}

std::vector<GradCheckResult> run_gradient_suite(const GradCheckOptions& options) {
  const std::size_t n = std::max<std::size_t>(1, options.instances);
  std::vector<Case> cases = op_cases(n);
  for (Case& c : loss_cases(n)) cases.push_back(std::move(c));
  for (Case& c : network_cases(std::max<std::size_t>(1, n / 4))) cases.push_back(std::move(c));

  std::vector<GradCheckResult> results;
  Rng rng(options.seed);
  for (const Case& c : cases) {
    GradCheckResult r{c.name, c.instances, 0.0, c.tolerance};
    for (std::size_t trial = 0; trial < c.instances; ++trial) {
      Instance inst = c.build(trial, rng);
      r.max_error = std::max(r.max_error, gradient_error(inst.fn, inst.inputs, options.step));
    }
    if (options.on_result) options.on_result(r);
    results.push_back(r);
  }

  GradCheckResult model{"model_parameters", 1, model_parameter_error(options.seed, options.step),
                        1e-3};
  if (options.on_result) options.on_result(model);
  results.push_back(model);
  return results;
}

}  // namespace wsds
