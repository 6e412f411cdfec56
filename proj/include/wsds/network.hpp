#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "wsds/autodiff.hpp"
#include "wsds/ops.hpp"
#include "wsds/rng.hpp"

namespace wsds {

inline constexpr std::size_t kNumLevels = 3;

/// Hyperparameters of the single deformable encoder layer. Defaults are the
/// desk-scale values; full_scale() gives the larger lineage defaults.
struct EncoderConfig {
  std::size_t hidden_dim = 32;
  std::size_t heads = 2;
  std::size_t points = 2;
  std::size_t levels = kNumLevels;
  std::size_t ffn_dim = 128;
  double dropout = 0.1;
  std::size_t encoder_layers = 1;

  static EncoderConfig full_scale();
  std::size_t head_dim() const { return hidden_dim / heads; }
  /// Throws ConfigError on an invalid combination.
  void validate() const;
};

struct ModelConfig {
  /// Channels of m_1 (coarsest), m_2, m_3 (finest).
  std::array<std::size_t, kNumLevels> backbone_channels{64, 32, 16};
  std::size_t stem_channels = 16;
  EncoderConfig encoder;
  /// Without the neck the head reads m_3 directly.
  bool use_dten = true;

  void validate() const;
};

bool operator==(const EncoderConfig& a, const EncoderConfig& b);
bool operator==(const ModelConfig& a, const ModelConfig& b);

struct LevelShape {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t size() const { return height * width; }
  bool operator==(const LevelShape&) const = default;
};

using LevelShapes = std::array<LevelShape, kNumLevels>;

/// Total token count N_in and the first column of each level.
std::size_t token_count(const LevelShapes& shapes);
std::array<std::size_t, kNumLevels> level_starts(const LevelShapes& shapes);

/// Three feature maps [C_l, H_l, W_l]; index 0 is the coarsest level (m_1).
class MultiScaleFeatures {
 public:
  /// Throws ShapeError unless every map is rank 3 and spatial size strictly
  /// grows from level 1 to level 3.
  explicit MultiScaleFeatures(std::array<Var, kNumLevels> maps);

  const Var& operator[](std::size_t level) const { return maps_.at(level); }
  LevelShapes shapes() const;

 private:
  std::array<Var, kNumLevels> maps_;
};

// ---------------------------------------------------------------------------
// Parameters.

using ParamTable = std::map<std::string, Tensor>;

enum class ModelRole { kTeacher, kStudent };

/// Named parameter store of the whole network.
class SegModel {
 public:
  /// Builds and initializes every parameter from `seed`.
  SegModel(ModelConfig config, std::uint64_t seed, ModelRole role = ModelRole::kTeacher);

  const ModelConfig& config() const { return config_; }
  ModelRole role() const { return role_; }
  const ParamTable& params() const { return params_; }
  ParamTable& params() { return params_; }
  Tensor& param(const std::string& name);
  const Tensor& param(const std::string& name) const;
  std::vector<std::string> param_names() const;
  std::size_t parameter_count() const;

 private:
  ModelConfig config_;
  ModelRole role_;
  ParamTable params_;
};

/// Parameters of a SegModel registered on a tape for one forward/backward.
class BoundParams {
 public:
  BoundParams(Tape& tape, const ParamTable& params, bool trainable);

  const Var& operator[](const std::string& name) const;
  Tape& tape() const { return *tape_; }
  /// Gradient for every parameter after Tape::backward (zeros if unreached).
  ParamTable gradients() const;

 private:
  Tape* tape_;
  std::map<std::string, Var> vars_;
};

struct AttentionParams {
  Var value_weight, value_bias;    // [C,C], [C]
  Var offset_weight, offset_bias;  // [C, Nh*Nl*Np*2], [Nh*Nl*Np*2]
  Var weight_weight, weight_bias;  // [C, Nh*Nl*Np], [Nh*Nl*Np]
  Var output_weight, output_bias;  // [C,C], [C]

  static AttentionParams bind(const BoundParams& p, const std::string& prefix);
};

struct EncoderParams {
  AttentionParams attention;
  Var norm1_gamma, norm1_beta;
  Var ffn1_weight, ffn1_bias, ffn_slope, ffn2_weight, ffn2_bias;
  Var norm2_gamma, norm2_beta;

  static EncoderParams bind(const BoundParams& p, const std::string& prefix);
};

struct FaBlockParams {
  Var conv_weight, conv_bias, slope;

  static FaBlockParams bind(const BoundParams& p, const std::string& prefix);
};

struct HeadParams {
  Var conv1_weight, conv1_bias, slope, conv2_weight, conv2_bias;

  static HeadParams bind(const BoundParams& p, const std::string& prefix);
};

// ---------------------------------------------------------------------------
// Forward passes.

/// image[3,H,W] with H, W divisible by 16 -> maps at strides 16, 8, 4.
MultiScaleFeatures backbone_forward(const BoundParams& p, const Var& image,
                                    const ModelConfig& cfg);

/// Per-level 1x1 projection to C channels, layer norm over channels, then
/// row-major flatten and concatenation l = 1, 2, 3 -> m_f[C, N_in].
Var project_and_flatten(const BoundParams& p, const MultiScaleFeatures& feats,
                        const EncoderConfig& cfg);

/// P[N_in, 2] with ((x + 0.5) / W_l, (y + 0.5) / H_l), rows in flatten order.
Tensor generate_reference_points(const LevelShapes& shapes);

/// Fixed 2-D sinusoidal encoding [C, N_in] (y half then x half of channels).
Tensor sinusoidal_position_encoding(const LevelShapes& shapes, std::size_t channels);

/// Position encoding plus the learned level vector (level_embed[N_l, C]).
Var build_embeddings(const Var& level_embed, const LevelShapes& shapes, std::size_t channels);

struct AttentionResult {
  Var output;   // O_DA [C, N_in]
  Var weights;  // W [N_in, N_h, N_l, N_p]
};

/// Multi-scale deformable attention. Offsets are expressed in pixels of the
/// sampled level: location = P + offset / (W_l, H_l).
AttentionResult deformable_attention(const Var& m_f, const Var& embeddings,
                                     const Tensor& reference_points, const LevelShapes& shapes,
                                     const AttentionParams& params, const EncoderConfig& cfg);

/// O = LN(h + FFN(h)), h = LN(Dropout(O_DA) + m_f); FFN = linear, PReLU,
/// dropout, linear. Input and output are [C, N_in].
Var encoder_forward(const Var& m_f, const Var& embeddings, const Tensor& reference_points,
                    const LevelShapes& shapes, const EncoderParams& params,
                    const EncoderConfig& cfg, bool training, Rng& rng);

/// Inverse of the flatten/concat step: O[C, N_in] -> o_l[C, H_l, W_l].
MultiScaleFeatures split_levels(const Var& encoded, const LevelShapes& shapes);

/// PReLU(Conv3x3(original)) + bilinear resize of `enhanced` to original's size.
Var fa_block(const Var& original, const Var& enhanced, const FaBlockParams& params);

/// Whole neck: encoder over all levels, then FA blocks over m_1, m_2, m_3 fed
/// with o_3 first and the previous block's output afterwards. Returns
/// [C, H_3, W_3].
Var dten_forward(const BoundParams& p, const MultiScaleFeatures& feats, const ModelConfig& cfg,
                 bool training, Rng& rng);

/// Conv3x3, PReLU, Conv1x1 to one channel, bilinear upsample, sigmoid.
Var head_forward(const Var& features, std::size_t out_h, std::size_t out_w,
                 const HeadParams& params);

/// Full model: image[3,H,W] in [0,1] -> probability map [1,H,W].
Var predict(const BoundParams& p, const Var& image, const ModelConfig& cfg, bool training,
            Rng& rng);

/// Inference-mode prediction as a plain tensor.
Tensor predict(const SegModel& model, const Tensor& image);

}  // namespace wsds
