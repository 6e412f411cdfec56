#include "wsds/network.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "wsds/errors.hpp"

namespace wsds {

EncoderConfig EncoderConfig::full_scale() {
  EncoderConfig cfg;
  cfg.hidden_dim = 64;
  cfg.heads = 8;
  cfg.points = 4;
  cfg.ffn_dim = 256;
  return cfg;
}

void EncoderConfig::validate() const {
  if (hidden_dim == 0 || heads == 0 || points == 0 || ffn_dim == 0) {
    throw ConfigError("encoder dimensions must be positive");
  }
  if (hidden_dim % heads != 0) throw ConfigError("hidden_dim must be divisible by heads");
  if (hidden_dim % 4 != 0) {
    throw ConfigError("hidden_dim must be divisible by 4 for the 2-D position encoding");
  }
  if (levels != kNumLevels) throw ConfigError("the encoder works on exactly 3 levels");
  if (encoder_layers != 1) throw ConfigError("exactly one encoder layer is supported");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
}

void ModelConfig::validate() const {
  for (std::size_t c : backbone_channels) {
    if (c == 0) throw ConfigError("backbone channels must be positive");
  }
  if (stem_channels == 0) throw ConfigError("stem channels must be positive");
  encoder.validate();
}

bool operator==(const EncoderConfig& a, const EncoderConfig& b) {
  return a.hidden_dim == b.hidden_dim && a.heads == b.heads && a.points == b.points &&
         a.levels == b.levels && a.ffn_dim == b.ffn_dim && a.dropout == b.dropout &&
         a.encoder_layers == b.encoder_layers;
}

bool operator==(const ModelConfig& a, const ModelConfig& b) {
  return a.backbone_channels == b.backbone_channels && a.stem_channels == b.stem_channels &&
         a.encoder == b.encoder && a.use_dten == b.use_dten;
}

std::size_t token_count(const LevelShapes& shapes) {
  std::size_t n = 0;
  for (const auto& s : shapes) n += s.size();
  return n;
}

std::array<std::size_t, kNumLevels> level_starts(const LevelShapes& shapes) {
  std::array<std::size_t, kNumLevels> starts{};
  std::size_t acc = 0;
  for (std::size_t l = 0; l < kNumLevels; ++l) {
    starts[l] = acc;
    acc += shapes[l].size();
  }
  return starts;
}

MultiScaleFeatures::MultiScaleFeatures(std::array<Var, kNumLevels> maps) : maps_(std::move(maps)) {
  for (std::size_t l = 0; l < kNumLevels; ++l) {
    if (maps_[l].shape().size() != 3) throw ShapeError("feature maps must be [C,H,W]");
    if (l > 0) {
      const Shape& prev = maps_[l - 1].shape();
      const Shape& cur = maps_[l].shape();
      if (!(cur[1] > prev[1] && cur[2] > prev[2])) {
        throw ShapeError("feature levels must grow strictly from coarse to fine");
      }
    }
  }
}

LevelShapes MultiScaleFeatures::shapes() const {
  LevelShapes s;
  for (std::size_t l = 0; l < kNumLevels; ++l) s[l] = {maps_[l].shape()[1], maps_[l].shape()[2]};
  return s;
}

// ---------------------------------------------------------------------------
// Parameter store.

namespace {

std::string level_name(const std::string& stem, std::size_t level) {
  return stem + std::to_string(level + 1);
}

class Initializer {
 public:
  Initializer(ParamTable& table, std::uint64_t seed) : table_(table), rng_(seed) {}

  // Uniform in +-gain * sqrt(3 / fan_in), i.e. variance gain^2 / fan_in.
  void fan_in_uniform(const std::string& name, Shape shape, std::size_t fan_in, double gain) {
    Tensor t(std::move(shape));
    const double bound = gain * std::sqrt(3.0 / static_cast<double>(fan_in));
    for (double& v : t.data()) v = rng_.uniform(-bound, bound);
    insert(name, std::move(t));
  }
  void constant(const std::string& name, Shape shape, double value) {
    insert(name, Tensor(std::move(shape), value));
  }
  void normal(const std::string& name, Shape shape, double stddev) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = stddev * rng_.normal();
    insert(name, std::move(t));
  }

  void conv(const std::string& prefix, std::size_t out, std::size_t in, std::size_t k,
            double gain) {
    fan_in_uniform(prefix + ".weight", {out, in, k, k}, in * k * k, gain);
    constant(prefix + ".bias", {out}, 0.0);
  }
  void linear(const std::string& prefix, std::size_t in, std::size_t out, double gain) {
    fan_in_uniform(prefix + ".weight", {in, out}, in, gain);
    constant(prefix + ".bias", {out}, 0.0);
  }
  void zero_linear(const std::string& prefix, std::size_t in, std::size_t out) {
    constant(prefix + ".weight", {in, out}, 0.0);
    constant(prefix + ".bias", {out}, 0.0);
  }
  void norm(const std::string& prefix, std::size_t dim) {
    constant(prefix + ".gamma", {dim}, 1.0);
    constant(prefix + ".beta", {dim}, 0.0);
  }
  void slope(const std::string& name) { constant(name, {1}, 0.25); }

 private:
  void insert(const std::string& name, Tensor t) {
    if (!table_.emplace(name, std::move(t)).second) {
      throw ConfigError("duplicate parameter name " + name);
    }
  }

  ParamTable& table_;
  Rng rng_;
};

// Kaiming gain for a PReLU with slope 0.25.
const double kPreluGain = std::sqrt(2.0 / (1.0 + 0.25 * 0.25));

}  // namespace

SegModel::SegModel(ModelConfig config, std::uint64_t seed, ModelRole role)
    : config_(std::move(config)), role_(role) {
  config_.validate();
  Initializer init(params_, seed);
  const auto& ch = config_.backbone_channels;  // m_1, m_2, m_3
  const std::size_t c = config_.encoder.hidden_dim;

  init.conv("backbone.stem", config_.stem_channels, 3, 3, kPreluGain);
  init.slope("backbone.stem.slope");
  init.conv("backbone.stage3a", ch[2], config_.stem_channels, 3, kPreluGain);
  init.slope("backbone.stage3a.slope");
  init.conv("backbone.stage3b", ch[2], ch[2], 3, kPreluGain);
  init.slope("backbone.stage3b.slope");
  init.conv("backbone.stage2", ch[1], ch[2], 3, kPreluGain);
  init.slope("backbone.stage2.slope");
  init.conv("backbone.stage1", ch[0], ch[1], 3, kPreluGain);
  init.slope("backbone.stage1.slope");

  if (config_.use_dten) {
    const EncoderConfig& e = config_.encoder;
    const std::size_t samples = e.heads * e.levels * e.points;
    for (std::size_t l = 0; l < kNumLevels; ++l) {
      init.conv(level_name("dten.proj", l), c, ch[l], 1, 1.0);
      init.norm(level_name("dten.proj", l) + ".norm", c);
    }
    init.normal("dten.level_embed", {kNumLevels, c}, 0.1);
    init.linear("dten.encoder.attn.value", c, c, 1.0);
    init.zero_linear("dten.encoder.attn.offset", c, samples * 2);
    init.zero_linear("dten.encoder.attn.weight", c, samples);
    init.linear("dten.encoder.attn.output", c, c, 1.0);
    init.norm("dten.encoder.norm1", c);
    init.linear("dten.encoder.ffn1", c, e.ffn_dim, kPreluGain);
    init.slope("dten.encoder.ffn.slope");
    init.linear("dten.encoder.ffn2", e.ffn_dim, c, 1.0);
    init.norm("dten.encoder.norm2", c);
    for (std::size_t l = 0; l < kNumLevels; ++l) {
      init.conv(level_name("dten.fa", l), c, ch[l], 3, kPreluGain);
      init.slope(level_name("dten.fa", l) + ".slope");
    }
  }

  const std::size_t head_in = config_.use_dten ? c : ch[2];
  init.conv("head.conv1", c, head_in, 3, kPreluGain);
  init.slope("head.slope");
  init.conv("head.conv2", 1, c, 1, 1.0);
}

Tensor& SegModel::param(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter " + name);
  return it->second;
}

const Tensor& SegModel::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter " + name);
  return it->second;
}

std::vector<std::string> SegModel::param_names() const {
  std::vector<std::string> names;
  for (const auto& [name, _] : params_) names.push_back(name);
  return names;
}

std::size_t SegModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.numel();
  return n;
}

BoundParams::BoundParams(Tape& tape, const ParamTable& params, bool trainable) : tape_(&tape) {
  for (const auto& [name, value] : params) vars_.emplace(name, tape.leaf(value, trainable));
}

const Var& BoundParams::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw ConfigError("parameter " + name + " is not bound");
  return it->second;
}

ParamTable BoundParams::gradients() const {
  ParamTable grads;
  for (const auto& [name, var] : vars_) grads.emplace(name, tape_->grad_or_zeros(var));
  return grads;
}

AttentionParams AttentionParams::bind(const BoundParams& p, const std::string& prefix) {
  return {p[prefix + ".value.weight"],  p[prefix + ".value.bias"],
          p[prefix + ".offset.weight"], p[prefix + ".offset.bias"],
          p[prefix + ".weight.weight"], p[prefix + ".weight.bias"],
          p[prefix + ".output.weight"], p[prefix + ".output.bias"]};
}

EncoderParams EncoderParams::bind(const BoundParams& p, const std::string& prefix) {
  return {AttentionParams::bind(p, prefix + ".attn"),
          p[prefix + ".norm1.gamma"],
          p[prefix + ".norm1.beta"],
          p[prefix + ".ffn1.weight"],
          p[prefix + ".ffn1.bias"],
          p[prefix + ".ffn.slope"],
          p[prefix + ".ffn2.weight"],
          p[prefix + ".ffn2.bias"],
          p[prefix + ".norm2.gamma"],
          p[prefix + ".norm2.beta"]};
}

FaBlockParams FaBlockParams::bind(const BoundParams& p, const std::string& prefix) {
  return {p[prefix + ".weight"], p[prefix + ".bias"], p[prefix + ".slope"]};
}

HeadParams HeadParams::bind(const BoundParams& p, const std::string& prefix) {
  return {p[prefix + ".conv1.weight"], p[prefix + ".conv1.bias"], p[prefix + ".slope"],
          p[prefix + ".conv2.weight"], p[prefix + ".conv2.bias"]};
}

// ---------------------------------------------------------------------------
// Forward passes.

namespace {

Var as_batch(const Var& map) {
  const Shape& s = map.shape();
  return reshape(map, {1, s[0], s[1], s[2]});
}

Var drop_batch(const Var& map) {
  const Shape& s = map.shape();
  return reshape(map, {s[1], s[2], s[3]});
}

Var conv_prelu(const BoundParams& p, const std::string& prefix, const Var& x, std::size_t stride) {
  Var y = conv2d(x, p[prefix + ".weight"], p[prefix + ".bias"], stride, 1);
  return prelu(y, p[prefix + ".slope"]);
}

}  // namespace

MultiScaleFeatures backbone_forward(const BoundParams& p, const Var& image,
                                    const ModelConfig& cfg) {
  const Shape& s = image.shape();
  if (s.size() != 3 || s[0] != 3) throw ShapeError("backbone expects an image [3,H,W]");
  if (s[1] % 16 != 0 || s[2] % 16 != 0) {
    throw ShapeError("image extents must be divisible by 16, got " + shape_str(s));
  }
  (void)cfg;
  Var x = conv_prelu(p, "backbone.stem", as_batch(image), 2);  // stride 2
  x = conv_prelu(p, "backbone.stage3a", x, 2);                 // stride 4
  Var m3 = conv_prelu(p, "backbone.stage3b", x, 1);
  Var m2 = conv_prelu(p, "backbone.stage2", m3, 2);             // stride 8
  Var m1 = conv_prelu(p, "backbone.stage1", m2, 2);             // stride 16
  return MultiScaleFeatures({drop_batch(m1), drop_batch(m2), drop_batch(m3)});
}

Var project_and_flatten(const BoundParams& p, const MultiScaleFeatures& feats,
                        const EncoderConfig& cfg) {
  cfg.validate();
  std::vector<Var> blocks;
  for (std::size_t l = 0; l < kNumLevels; ++l) {
    const std::string prefix = level_name("dten.proj", l);
    Var proj = conv2d(as_batch(feats[l]), p[prefix + ".weight"], p[prefix + ".bias"], 1, 0);
    const Shape& s = proj.shape();
    Var flat = reshape(proj, {s[1], s[2] * s[3]});
    blocks.push_back(layer_norm(flat, p[prefix + ".norm.gamma"], p[prefix + ".norm.beta"], 0));
  }
  return concat(blocks, 1);
}

Tensor generate_reference_points(const LevelShapes& shapes) {
  Tensor points({token_count(shapes), 2});
  std::size_t row = 0;
  for (const LevelShape& s : shapes) {
    if (s.height == 0 || s.width == 0) throw ShapeError("level extents must be positive");
    for (std::size_t y = 0; y < s.height; ++y) {
      for (std::size_t x = 0; x < s.width; ++x) {
        points[2 * row] = (static_cast<double>(x) + 0.5) / static_cast<double>(s.width);
        points[2 * row + 1] = (static_cast<double>(y) + 0.5) / static_cast<double>(s.height);
        ++row;
      }
    }
  }
  return points;
}

Tensor sinusoidal_position_encoding(const LevelShapes& shapes, std::size_t channels) {
  if (channels % 4 != 0) throw ShapeError("position encoding needs channels divisible by 4");
  const std::size_t n = token_count(shapes);
  const std::size_t half = channels / 2;
  const Tensor ref = generate_reference_points(shapes);
  Tensor enc({channels, n});
  for (std::size_t col = 0; col < n; ++col) {
    const double coords[2] = {ref[2 * col + 1], ref[2 * col]};  // y, then x
    for (std::size_t part = 0; part < 2; ++part) {
      for (std::size_t i = 0; i < half; ++i) {
        const double freq =
            std::pow(10000.0, static_cast<double>(2 * (i / 2)) / static_cast<double>(half));
        const double angle = coords[part] * 2.0 * std::numbers::pi / freq;
        enc[(part * half + i) * n + col] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
      }
    }
  }
  return enc;
}

Var build_embeddings(const Var& level_embed, const LevelShapes& shapes, std::size_t channels) {
  if (level_embed.shape() != Shape{kNumLevels, channels}) {
    throw ShapeError("level embedding must be [3, C]");
  }
  std::vector<Var> blocks;
  for (std::size_t l = 0; l < kNumLevels; ++l) {
    Var column = transpose(slice(level_embed, 0, l, 1));  // [C,1]
    blocks.push_back(broadcast_to(column, {channels, shapes[l].size()}));
  }
  Var levels = concat(blocks, 1);
  return add(levels, level_embed.tape().constant(sinusoidal_position_encoding(shapes, channels)));
}

AttentionResult deformable_attention(const Var& m_f, const Var& embeddings,
                                     const Tensor& reference_points, const LevelShapes& shapes,
                                     const AttentionParams& params, const EncoderConfig& cfg) {
  cfg.validate();
  Tape& tape = m_f.tape();
  const std::size_t c = cfg.hidden_dim;
  const std::size_t n = token_count(shapes);
  const std::size_t heads = cfg.heads;
  const std::size_t pts = cfg.points;
  const std::size_t d = cfg.head_dim();
  if (m_f.shape() != Shape{c, n} || embeddings.shape() != Shape{c, n}) {
    throw ShapeError("deformable_attention: m_f and E must be [C, N_in] = " +
                     shape_str({c, n}) + ", got " + shape_str(m_f.shape()));
  }
  if (reference_points.shape() != Shape{n, 2}) {
    throw ShapeError("deformable_attention: reference points must be [N_in, 2]");
  }

  Var tokens = transpose(m_f);                    // [N, C]
  Var queries = transpose(add(m_f, embeddings));  // [N, C]
  Var value = linear(tokens, params.value_weight, params.value_bias);
  Var offsets = reshape(linear(queries, params.offset_weight, params.offset_bias),
                        {n, heads, kNumLevels, pts, 2});
  Var logits = reshape(linear(queries, params.weight_weight, params.weight_bias),
                       {n, heads, kNumLevels * pts});
  Var weights = reshape(softmax(logits, 2), {n, heads, kNumLevels, pts});

  // Reference points repeated once per sampling point: row n * Np + p.
  Tensor ref_rep({n * pts, 2});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < pts; ++p) {
      ref_rep[2 * (i * pts + p)] = reference_points[2 * i];
      ref_rep[2 * (i * pts + p) + 1] = reference_points[2 * i + 1];
    }
  }
  Var ref = tape.constant(std::move(ref_rep));
  const auto starts = level_starts(shapes);

  std::vector<Var> head_outputs;
  for (std::size_t h = 0; h < heads; ++h) {
    Var head_sum;
    Var head_value = slice(value, 1, h * d, d);  // [N, d]
    for (std::size_t l = 0; l < kNumLevels; ++l) {
      const LevelShape& ls = shapes[l];
      Var level_map = reshape(transpose(slice(head_value, 0, starts[l], ls.size())),
                              {d, ls.height, ls.width});
      Var level_off = reshape(slice(slice(offsets, 1, h, 1), 2, l, 1), {n * pts, 2});
      Tensor scale_t({n * pts, 2});
      for (std::size_t k = 0; k < n * pts; ++k) {
        scale_t[2 * k] = 1.0 / static_cast<double>(ls.width);
        scale_t[2 * k + 1] = 1.0 / static_cast<double>(ls.height);
      }
      Var locations = add(ref, mul(level_off, tape.constant(std::move(scale_t))));
      Var sampled = bilinear_sample(level_map, locations);  // [d, N*Np]
      Var w = reshape(slice(slice(weights, 1, h, 1), 2, l, 1), {1, n * pts});
      Var weighted = mul(sampled, broadcast_to(w, {d, n * pts}));
      Var summed = sum_axis(reshape(weighted, {d, n, pts}), 2);  // [d, N]
      head_sum = head_sum.valid() ? add(head_sum, summed) : summed;
    }
    head_outputs.push_back(head_sum);
  }
  Var sampled_sum = concat(head_outputs, 0);  // O_s [C, N]
  Var out = linear(transpose(sampled_sum), params.output_weight, params.output_bias);
  return {transpose(out), weights};
}

Var encoder_forward(const Var& m_f, const Var& embeddings, const Tensor& reference_points,
                    const LevelShapes& shapes, const EncoderParams& params,
                    const EncoderConfig& cfg, bool training, Rng& rng) {
  AttentionResult attn =
      deformable_attention(m_f, embeddings, reference_points, shapes, params.attention, cfg);
  Var tokens = transpose(m_f);
  Var attended = transpose(attn.output);
  Var h = layer_norm(add(dropout(attended, cfg.dropout, training, rng), tokens), params.norm1_gamma,
                     params.norm1_beta, 1);
  Var hidden = prelu(linear(h, params.ffn1_weight, params.ffn1_bias), params.ffn_slope);
  Var ffn = linear(dropout(hidden, cfg.dropout, training, rng), params.ffn2_weight, params.ffn2_bias);
  Var out = layer_norm(add(h, ffn), params.norm2_gamma, params.norm2_beta, 1);
  return transpose(out);
}

MultiScaleFeatures split_levels(const Var& encoded, const LevelShapes& shapes) {
  const Shape& s = encoded.shape();
  if (s.size() != 2 || s[1] != token_count(shapes)) {
    throw ShapeError("split_levels: expected [C, " + std::to_string(token_count(shapes)) +
                     "], got " + shape_str(s));
  }
  const auto starts = level_starts(shapes);
  std::array<Var, kNumLevels> maps;
  for (std::size_t l = 0; l < kNumLevels; ++l) {
    maps[l] = reshape(slice(encoded, 1, starts[l], shapes[l].size()),
                      {s[0], shapes[l].height, shapes[l].width});
  }
  return MultiScaleFeatures(maps);
}

Var fa_block(const Var& original, const Var& enhanced, const FaBlockParams& params) {
  const Shape& os = original.shape();
  const Shape& es = enhanced.shape();
  if (os.size() != 3 || es.size() != 3) throw ShapeError("fa_block expects [C,H,W] maps");
  Var embedded = prelu(drop_batch(conv2d(as_batch(original), params.conv_weight,
                                         params.conv_bias, 1, 1)),
                       params.slope);
  Var resized = interpolate_bilinear(enhanced, os[1], os[2]);
  return add(embedded, resized);
}

Var dten_forward(const BoundParams& p, const MultiScaleFeatures& feats, const ModelConfig& cfg,
                 bool training, Rng& rng) {
  const EncoderConfig& e = cfg.encoder;
  const LevelShapes shapes = feats.shapes();
  Var m_f = project_and_flatten(p, feats, e);
  Var embeddings = build_embeddings(p["dten.level_embed"], shapes, e.hidden_dim);
  const Tensor reference = generate_reference_points(shapes);
  Var encoded = encoder_forward(m_f, embeddings, reference, shapes,
                                EncoderParams::bind(p, "dten.encoder"), e, training, rng);
  MultiScaleFeatures enhanced = split_levels(encoded, shapes);
  Var running = enhanced[kNumLevels - 1];  // o_3
  for (std::size_t l = 0; l < kNumLevels; ++l) {
    running = fa_block(feats[l], running, FaBlockParams::bind(p, level_name("dten.fa", l)));
  }
  return running;
}

Var head_forward(const Var& features, std::size_t out_h, std::size_t out_w,
                 const HeadParams& params) {
  Var x = conv2d(as_batch(features), params.conv1_weight, params.conv1_bias, 1, 1);
  x = prelu(x, params.slope);
  x = drop_batch(conv2d(x, params.conv2_weight, params.conv2_bias, 1, 0));  // [1,h,w]
  return sigmoid(interpolate_bilinear(x, out_h, out_w));
}

Var predict(const BoundParams& p, const Var& image, const ModelConfig& cfg, bool training,
            Rng& rng) {
  const Shape& s = image.shape();
  MultiScaleFeatures feats = backbone_forward(p, add_scalar(image, -0.5), cfg);
  Var neck = cfg.use_dten ? dten_forward(p, feats, cfg, training, rng) : feats[kNumLevels - 1];
  return head_forward(neck, s[1], s[2], HeadParams::bind(p, "head"));
}

Tensor predict(const SegModel& model, const Tensor& image) {
  Tape tape;
  BoundParams p(tape, model.params(), false);
  Rng unused(0);
  return predict(p, tape.constant(image), model.config(), false, unused).value();
}

}  // namespace wsds
