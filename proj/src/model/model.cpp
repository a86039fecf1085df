#include "datr/model/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "datr/autodiff/ops.hpp"
#include "datr/error.hpp"

namespace datr::model {

namespace {

enum class Group { kStage1, kStage2 };

template <typename Fn>
void visit_block(const std::string& prefix, TransformerBlockParams& b, Fn& fn, Group g) {
  fn(prefix + ".ln1.gain", b.ln1_gain, g);
  fn(prefix + ".ln1.bias", b.ln1_bias, g);
  fn(prefix + ".attn.wq", b.attn.wq, g);
  fn(prefix + ".attn.wk", b.attn.wk, g);
  fn(prefix + ".attn.wv", b.attn.wv, g);
  fn(prefix + ".attn.out.weight", b.attn.out.weight, g);
  fn(prefix + ".attn.out.bias", b.attn.out.bias, g);
  fn(prefix + ".ln2.gain", b.ln2_gain, g);
  fn(prefix + ".ln2.bias", b.ln2_bias, g);
  fn(prefix + ".ffn1.weight", b.ffn1.weight, g);
  fn(prefix + ".ffn1.bias", b.ffn1.bias, g);
  fn(prefix + ".ffn2.weight", b.ffn2.weight, g);
  fn(prefix + ".ffn2.bias", b.ffn2.bias, g);
}

// Visits every parameter slot in checkpoint order.
template <typename Fn>
void visit_parameters(TextEncoderParams& text, VideoEncoderParams& video,
                      FusionRerankerParams& fusion, Temperature& temperature, Fn&& fn) {
  const auto s1 = Group::kStage1;
  const auto s2 = Group::kStage2;
  fn("text.token_embedding", text.token_embedding, s1);
  fn("text.position_embedding", text.position_embedding, s1);
  for (std::size_t i = 0; i < text.blocks.size(); ++i) {
    visit_block("text.blocks." + std::to_string(i), text.blocks[i], fn, s1);
  }
  fn("text.adapter1.weight", text.adapter1.weight, s1);
  fn("text.adapter1.bias", text.adapter1.bias, s1);
  fn("text.adapter2.weight", text.adapter2.weight, s1);
  fn("text.adapter2.bias", text.adapter2.bias, s1);
  fn("video.input_proj.weight", video.input_proj.weight, s1);
  fn("video.input_proj.bias", video.input_proj.bias, s1);
  for (std::size_t i = 0; i < video.blocks.size(); ++i) {
    const auto prefix = "video.blocks." + std::to_string(i);
    visit_block(prefix, video.blocks[i], fn, s1);
    fn(prefix + ".conv.kernel", video.conv_kernels[i], s1);
    fn(prefix + ".conv.bias", video.conv_bias[i], s1);
  }
  fn("temperature.log_tau", temperature.log_tau, s1);
  fn("fusion.mlp1.weight", fusion.fusion1.weight, s2);
  fn("fusion.mlp1.bias", fusion.fusion1.bias, s2);
  fn("fusion.mlp2.weight", fusion.fusion2.weight, s2);
  fn("fusion.mlp2.bias", fusion.fusion2.bias, s2);
  fn("rerank.phi.weight", fusion.phi.weight, s2);
  fn("rerank.phi.bias", fusion.phi.bias, s2);
  fn("rerank.score.w", fusion.score_w, s2);
  fn("rerank.score.b", fusion.score_b, s2);
}

class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  Tensor xavier(ad::Shape shape, std::size_t fan_in, std::size_t fan_out) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> v(ad::shape_numel(shape));
    for (auto& x : v) x = dist(rng_);
    return Tensor(std::move(shape), std::move(v), true);
  }
  Tensor matrix(std::size_t in, std::size_t out) { return xavier({in, out}, in, out); }
  static Tensor zeros(std::size_t n) { return Tensor::zeros({n}, true); }
  static Tensor ones(std::size_t n) { return Tensor({n}, std::vector<double>(n, 1.0), true); }
  Linear linear(std::size_t in, std::size_t out) { return {matrix(in, out), zeros(out)}; }

  TransformerBlockParams block(std::size_t d, std::size_t hidden) {
    TransformerBlockParams b;
    b.ln1_gain = ones(d);
    b.ln1_bias = zeros(d);
    b.attn.wq = matrix(d, d);
    b.attn.wk = matrix(d, d);
    b.attn.wv = matrix(d, d);
    b.attn.out = linear(d, d);
    b.ln2_gain = ones(d);
    b.ln2_bias = zeros(d);
    b.ffn1 = linear(d, hidden);
    b.ffn2 = linear(hidden, d);
    return b;
  }

 private:
  std::mt19937_64 rng_;
};

Tensor linear_forward(const Linear& l, const Tensor& x) {
  return ad::add_row(ad::matmul(x, l.weight), l.bias);
}

}  // namespace

double Temperature::value() const {
  return std::clamp(std::exp(log_tau.item()), kTauMin, kTauMax);
}

Model Model::initialize(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Model m;
  m.config_ = config;
  m.vocab_ = Vocabulary(config.vocab);
  Initializer init(seed);
  const auto d = config.d;
  const auto hidden = config.hidden();

  m.text.token_embedding = init.xavier({config.vocab_size(), d}, d, d);
  m.text.position_embedding = init.xavier({config.max_tokens, d}, d, d);
  for (std::size_t i = 0; i < config.text_layers; ++i) m.text.blocks.push_back(init.block(d, hidden));
  m.text.adapter1 = init.linear(d, hidden);
  m.text.adapter2 = init.linear(hidden, d);

  m.video.input_proj = init.linear(config.d_in, d);
  for (std::size_t i = 0; i < config.layers; ++i) {
    m.video.blocks.push_back(init.block(d, hidden));
    m.video.conv_kernels.push_back(init.xavier({3, d, d}, 3 * d, 3 * d));
    m.video.conv_bias.push_back(Initializer::zeros(d));
  }

  m.fusion.fusion1 = init.linear(4 * d, 2 * d);
  m.fusion.fusion2 = init.linear(2 * d, d);
  m.fusion.phi = init.linear(3 * d, d);
  m.fusion.score_w = init.matrix(d, 1);
  m.fusion.score_b = Initializer::zeros(1);

  m.temperature.log_tau = Tensor::scalar(std::log(config.tau_init), true);
  return m;
}

std::vector<ad::NamedTensor> Model::named_parameters() const {
  std::vector<ad::NamedTensor> out;
  auto& self = const_cast<Model&>(*this);
  visit_parameters(self.text, self.video, self.fusion, self.temperature,
                   [&](const std::string& name, Tensor& t, Group) { out.push_back({name, t}); });
  return out;
}

std::vector<ad::NamedTensor> Model::stage1_parameters() const {
  std::vector<ad::NamedTensor> out;
  auto& self = const_cast<Model&>(*this);
  visit_parameters(self.text, self.video, self.fusion, self.temperature,
                   [&](const std::string& name, Tensor& t, Group g) {
                     if (g == Group::kStage1) out.push_back({name, t});
                   });
  return out;
}

std::vector<ad::NamedTensor> Model::stage2_parameters() const {
  std::vector<ad::NamedTensor> out;
  auto& self = const_cast<Model&>(*this);
  visit_parameters(self.text, self.video, self.fusion, self.temperature,
                   [&](const std::string& name, Tensor& t, Group g) {
                     if (g == Group::kStage2) out.push_back({name, t});
                   });
  return out;
}

ad::Checkpoint Model::to_checkpoint() const {
  ad::Checkpoint ckpt;
  ckpt.config_text = config_.to_text();
  ckpt.tensors = named_parameters();
  return ckpt;
}

Model Model::from_checkpoint(const ad::Checkpoint& ckpt) {
  const auto config = ModelConfig::from_text(ckpt.config_text);
  // Build the skeleton with the right shapes, then overwrite every slot.
  Model m = initialize(config, 0);
  visit_parameters(m.text, m.video, m.fusion, m.temperature,
                   [&](const std::string& name, Tensor& slot, Group) {
                     const auto& stored = ckpt.find(name);
                     if (stored.shape() != slot.shape()) {
                       throw DataError("checkpoint tensor '" + name + "' has shape " +
                                       ad::shape_to_string(stored.shape()) + ", model expects " +
                                       ad::shape_to_string(slot.shape()));
                     }
                     slot = Tensor(stored.shape(),
                                   std::vector<double>(stored.data().begin(), stored.data().end()),
                                   true);
                   });
  if (ckpt.tensors.size() != m.named_parameters().size()) {
    throw DataError("checkpoint holds " + std::to_string(ckpt.tensors.size()) +
                    " tensors, model expects " + std::to_string(m.named_parameters().size()));
  }
  return m;
}

Model Model::clone() const {
  Model m = *this;
  visit_parameters(m.text, m.video, m.fusion, m.temperature,
                   [](const std::string&, Tensor& t, Group) { t = t.clone(); });
  return m;
}

// --- forward -------------------------------------------------------------

Tensor multi_head_attention(const AttentionParams& p, const Tensor& x, std::size_t heads) {
  const auto d = x.cols();
  const auto dh = d / heads;
  const auto q = ad::matmul(x, p.wq);
  const auto k = ad::matmul(x, p.wk);
  const auto v = ad::matmul(x, p.wv);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> outputs;
  outputs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const auto qh = ad::slice_cols(q, h * dh, (h + 1) * dh);
    const auto kh = ad::slice_cols(k, h * dh, (h + 1) * dh);
    const auto vh = ad::slice_cols(v, h * dh, (h + 1) * dh);
    const auto weights = ad::softmax_rows(ad::scale(ad::matmul_nt(qh, kh), inv_sqrt));
    outputs.push_back(ad::matmul(weights, vh));
  }
  const auto merged = heads == 1 ? outputs[0] : ad::concat_last_dim(outputs);
  return linear_forward(p.out, merged);
}

Tensor transformer_block(const TransformerBlockParams& p, const Tensor& x, std::size_t heads) {
  const auto attn_in = ad::layer_norm_rows(x, p.ln1_gain, p.ln1_bias);
  const auto h = ad::add(x, multi_head_attention(p.attn, attn_in, heads));
  const auto ffn_in = ad::layer_norm_rows(h, p.ln2_gain, p.ln2_bias);
  const auto ffn = linear_forward(p.ffn2, ad::relu(linear_forward(p.ffn1, ffn_in)));
  return ad::add(h, ffn);
}

Tensor text_features(const Model& m, std::span<const std::size_t> token_ids) {
  const auto& cfg = m.config();
  if (token_ids.empty() || token_ids.size() > cfg.max_tokens) {
    throw DimensionError("text encoder takes 1.." + std::to_string(cfg.max_tokens) +
                         " tokens, got " + std::to_string(token_ids.size()));
  }
  std::vector<std::size_t> positions(token_ids.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i;
  auto h = ad::add(ad::gather_rows(m.text.token_embedding, token_ids),
                   ad::gather_rows(m.text.position_embedding, positions));
  for (const auto& block : m.text.blocks) h = transformer_block(block, h, cfg.heads);
  const auto pooled = ad::mean_over_axis(h, 0);
  const auto hidden = ad::relu(linear_forward(m.text.adapter1, pooled));
  return linear_forward(m.text.adapter2, hidden);
}

Tensor encode_text_tokens(const Model& m, std::span<const std::size_t> token_ids) {
  return ad::l2_normalize_rows(text_features(m, token_ids));
}

Tensor encode_text(const Model& m, const std::string& text) {
  const auto ids = tokenize(text, m.vocab(), m.config().max_tokens);
  return encode_text_tokens(m, ids);
}

Tensor encode_texts(const Model& m, const std::vector<std::string>& texts) {
  if (texts.empty()) throw ContractError("encode_texts: empty batch");
  std::vector<Tensor> rows;
  rows.reserve(texts.size());
  for (const auto& t : texts) rows.push_back(encode_text(m, t));
  return ad::concat_rows(rows);
}

Tensor encode_video(const Model& m, const Tensor& frames) {
  const auto& cfg = m.config();
  if (frames.ndim() != 2 || frames.rows() != cfg.n_frames || frames.cols() != cfg.d_in) {
    throw DimensionError("encode_video: expected frames [" + std::to_string(cfg.n_frames) + "x" +
                         std::to_string(cfg.d_in) + "], got " + ad::shape_to_string(frames.shape()));
  }
  auto h = linear_forward(m.video.input_proj, frames);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    h = transformer_block(m.video.blocks[l], h, cfg.heads);
    h = ad::add_row(ad::conv1d(h, m.video.conv_kernels[l], 2, 1), m.video.conv_bias[l]);
  }
  return ad::l2_normalize_rows(ad::mean_over_axis(h, 0));
}

Tensor fusion_input(const Tensor& z_q1, const Tensor& z_q2, FusionMode mode) {
  if (z_q1.shape() != z_q2.shape() || z_q1.ndim() != 2) {
    throw DimensionError("fuse: query embeddings differ, " + ad::shape_to_string(z_q1.shape()) +
                         " vs " + ad::shape_to_string(z_q2.shape()));
  }
  const auto zero = Tensor::zeros(z_q1.shape());
  const Tensor additive = mode == FusionMode::kMulOnly ? zero : ad::add(z_q1, z_q2);
  const Tensor multiplicative = mode == FusionMode::kAddOnly ? zero : ad::mul(z_q1, z_q2);
  const std::vector<Tensor> parts{z_q1, z_q2, additive, multiplicative};
  return ad::concat_last_dim(parts);
}

Tensor fuse(const Model& m, const Tensor& z_q1, const Tensor& z_q2, FusionMode mode) {
  if (z_q1.ndim() != 2 || z_q1.cols() != m.config().d) {
    throw DimensionError("fuse: expected width " + std::to_string(m.config().d) + ", got " +
                         ad::shape_to_string(z_q1.shape()));
  }
  const auto features = fusion_input(z_q1, z_q2, mode);
  const auto hidden = ad::relu(linear_forward(m.fusion.fusion1, features));
  return linear_forward(m.fusion.fusion2, hidden);
}

Tensor rerank_scores(const Model& m, const Tensor& z_f, const Tensor& z_v) {
  if (z_f.shape() != z_v.shape() || z_f.ndim() != 2 || z_f.cols() != m.config().d) {
    throw DimensionError("rerank_scores: expected matching [Px" + std::to_string(m.config().d) +
                         "] inputs, got " + ad::shape_to_string(z_f.shape()) + " and " +
                         ad::shape_to_string(z_v.shape()));
  }
  const std::vector<Tensor> parts{z_f, z_v, ad::mul(z_f, z_v)};
  const auto phi = ad::relu(linear_forward(m.fusion.phi, ad::concat_last_dim(parts)));
  return ad::add_row(ad::matmul(phi, m.fusion.score_w), m.fusion.score_b);
}

double rerank_score(const Model& m, std::span<const double> z_f, std::span<const double> z_v) {
  return rerank_scores(m, Tensor::row(z_f), Tensor::row(z_v)).item();
}

}  // namespace datr::model
