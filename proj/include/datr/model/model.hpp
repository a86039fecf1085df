#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "datr/autodiff/checkpoint.hpp"
#include "datr/autodiff/tensor.hpp"
#include "datr/model/config.hpp"
#include "datr/model/tokenizer.hpp"

namespace datr::model {

using ad::Tensor;

// y = x·weight + bias, weight is [in×out].
struct Linear {
  Tensor weight;
  Tensor bias;
};

struct AttentionParams {
  Tensor wq, wk, wv;  // [d×d]
  Linear out;
};

// Pre-norm block: h = x + Attn(LN1(x)); y = h + FFN(LN2(h)).
struct TransformerBlockParams {
  Tensor ln1_gain, ln1_bias;
  AttentionParams attn;
  Tensor ln2_gain, ln2_bias;
  Linear ffn1;  // d -> 2d
  Linear ffn2;  // 2d -> d
};

struct TextEncoderParams {
  Tensor token_embedding;     // [vocab×d]
  Tensor position_embedding;  // [max_tokens×d]
  std::vector<TransformerBlockParams> blocks;
  Linear adapter1;  // d -> 2d
  Linear adapter2;  // 2d -> d
};

struct VideoEncoderParams {
  Linear input_proj;  // d_in -> d
  std::vector<TransformerBlockParams> blocks;
  std::vector<Tensor> conv_kernels;  // each [3×d×d]
  std::vector<Tensor> conv_bias;     // each [d]
};

struct FusionRerankerParams {
  Linear fusion1;  // 4d -> 2d
  Linear fusion2;  // 2d -> d
  Linear phi;      // 3d -> d, followed by ReLU
  Tensor score_w;  // [d×1]
  Tensor score_b;  // [1]
};

inline constexpr double kTauMin = 1e-3;
inline constexpr double kTauMax = 100.0;

struct Temperature {
  Tensor log_tau;  // [1]
  // exp(log_tau) clamped to [kTauMin, kTauMax].
  double value() const;
};

// All learnable weights plus the configuration and vocabulary they were built for.
class Model {
 public:
  // Xavier-uniform weights, zero biases, unit layer-norm gains, tau = tau_init.
  static Model initialize(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }

  TextEncoderParams text;
  VideoEncoderParams video;
  FusionRerankerParams fusion;
  Temperature temperature;

  // Stable names, in the order used by checkpoints.
  std::vector<ad::NamedTensor> named_parameters() const;
  // Text encoder, video encoder and temperature.
  std::vector<ad::NamedTensor> stage1_parameters() const;
  // Fusion MLP and re-ranker.
  std::vector<ad::NamedTensor> stage2_parameters() const;

  ad::Checkpoint to_checkpoint() const;
  static Model from_checkpoint(const ad::Checkpoint& ckpt);
  // Independent copy of every parameter.
  Model clone() const;

 private:
  ModelConfig config_;
  Vocabulary vocab_;
};

// --- forward graph -------------------------------------------------------

// Multi-head scaled dot-product attention over the rows of x (no residual).
Tensor multi_head_attention(const AttentionParams& p, const Tensor& x, std::size_t heads);
Tensor transformer_block(const TransformerBlockParams& p, const Tensor& x, std::size_t heads);

// Adapter output before normalization, [1×d].
Tensor text_features(const Model& m, std::span<const std::size_t> token_ids);
// Unit-norm text embedding [1×d]. Throws ZeroNormError on a vanishing adapter output.
Tensor encode_text_tokens(const Model& m, std::span<const std::size_t> token_ids);
Tensor encode_text(const Model& m, const std::string& text);
// One unit-norm row per text, [B×d].
Tensor encode_texts(const Model& m, const std::vector<std::string>& texts);

// frames is [n_frames×d_in]. Returns the unit-norm video embedding [1×d].
Tensor encode_video(const Model& m, const Tensor& frames);

// Fused query representation [B×d] from two [B×d] query embeddings.
Tensor fusion_input(const Tensor& z_q1, const Tensor& z_q2, FusionMode mode);
Tensor fuse(const Model& m, const Tensor& z_q1, const Tensor& z_q2, FusionMode mode);

// w·φ([z_F; z_V; z_F⊙z_V]) + b for each row pair, [P×1].
Tensor rerank_scores(const Model& m, const Tensor& z_f, const Tensor& z_v);
double rerank_score(const Model& m, std::span<const double> z_f, std::span<const double> z_v);

}  // namespace datr::model
