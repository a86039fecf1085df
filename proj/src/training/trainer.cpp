#include "datr/training/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iterator>
#include <nlohmann/json.hpp>
#include <numeric>
#include <random>
#include <set>

#include "datr/autodiff/ops.hpp"
#include "datr/error.hpp"
#include "datr/model/tokenizer.hpp"
#include "datr/retrieval/pipeline.hpp"

namespace datr::train {

using ad::Tensor;

std::string to_string(ContrastiveMode mode) {
  return mode == ContrastiveMode::kBidirectional ? "bidirectional" : "t2v";
}

ContrastiveMode parse_contrastive_mode(const std::string& text) {
  if (text == "bidirectional" || text == "bidir") return ContrastiveMode::kBidirectional;
  if (text == "t2v" || text == "t2v-only") return ContrastiveMode::kTextToVideo;
  throw ConfigError("unknown contrastive loss '" + text + "' (expected bidirectional or t2v)");
}

void TrainConfig::validate() const {
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2 for in-batch negatives");
  if (!(learning_rate > 0.0) || !(epsilon > 0.0)) throw ConfigError("learning rate and epsilon must be > 0");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in (0, 1)");
  }
  if (!(margin > 0.0)) throw ConfigError("margin must be > 0");
}

std::string TrainReport::to_json(bool include_timing) const {
  nlohmann::ordered_json j;
  j["stage"] = stage;
  j["seed"] = seed;
  j["initial_loss"] = initial_loss;
  j["loss_curve"] = loss_curve;
  if (!heldout_curve.empty()) j["heldout_curve"] = heldout_curve;
  if (!score_gap_curve.empty()) j["score_gap_curve"] = score_gap_curve;
  j["final_tau"] = final_tau;
  if (include_timing) j["wall_seconds"] = wall_seconds;
  return j.dump(2);
}

std::vector<TrainItem> make_items(const data::Corpus& corpus, const std::vector<std::string>& video_ids) {
  const std::set<std::string> wanted(video_ids.begin(), video_ids.end());
  std::vector<TrainItem> items;
  for (const auto& t : corpus.triplets) {
    if (!wanted.count(t.video_id)) continue;
    const auto* frames = corpus.frames(t.video_id);
    if (!frames) continue;
    items.push_back({t.q1, t.q2, t.video_id, frames});
  }
  return items;
}

model::ModelConfig model_config_for(const data::Corpus& corpus, model::ModelConfig base) {
  base.vocab = model::Vocabulary::collect(corpus.query_texts());
  if (!corpus.features.empty()) {
    const auto& f = corpus.features.begin()->second;
    base.n_frames = f.n_frames;
    base.d_in = f.dim;
  }
  base.validate();
  return base;
}

Tensor temperature(const Tensor& log_tau) {
  return ad::clamp(ad::exp(log_tau), model::kTauMin, model::kTauMax);
}

Tensor clip_loss(const Tensor& z_text, const Tensor& z_video, const Tensor& tau, ContrastiveMode mode) {
  if (z_text.ndim() != 2 || z_text.rows() < 1) throw ContractError("clip_loss: batch must hold B >= 1 rows");
  if (z_text.shape() != z_video.shape()) {
    throw DimensionError("clip_loss: text batch " + ad::shape_to_string(z_text.shape()) +
                         " and video batch " + ad::shape_to_string(z_video.shape()) + " differ");
  }
  const auto logits = ad::div_by_scalar(ad::matmul_nt(z_text, z_video), tau);
  const auto t2v = ad::scale(ad::mean(ad::diagonal(ad::log_softmax_rows(logits))), -1.0);
  if (mode == ContrastiveMode::kTextToVideo) return t2v;
  const auto v2t =
      ad::scale(ad::mean(ad::diagonal(ad::log_softmax_rows(ad::transpose(logits)))), -1.0);
  return ad::scale(ad::add(t2v, v2t), 0.5);
}

Tensor margin_ranking_loss(const Tensor& s_pos, const Tensor& s_neg, std::span<const std::size_t> owner,
                           double margin) {
  if (s_neg.ndim() != 2 || s_neg.rows() != owner.size()) {
    throw DimensionError("margin_ranking_loss: owner list does not match negative scores");
  }
  const auto hinge = ad::relu(ad::add_scalar(ad::sub(s_neg, ad::gather_rows(s_pos, owner)), margin));
  return ad::mean(hinge);
}

Adam::Adam(std::vector<ad::NamedTensor> params, const TrainConfig& config)
    : params_(std::move(params)),
      lr_(config.learning_rate),
      beta1_(config.beta1),
      beta2_(config.beta2),
      eps_(config.epsilon) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i].tensor;
    if (!p.has_grad()) continue;
    auto values = p.mutable_data();
    const auto grad = p.grad();
    for (std::size_t j = 0; j < values.size(); ++j) {
      m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * grad[j];
      v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * grad[j] * grad[j];
      values[j] -= lr_ * (m_[i][j] / c1) / (std::sqrt(v_[i][j] / c2) + eps_);
    }
  }
  zero_grad();
}

void Adam::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

namespace {

Tensor encode_video_batch(const model::Model& m, const std::vector<TrainItem>& items,
                          std::span<const std::size_t> rows) {
  std::vector<Tensor> out;
  out.reserve(rows.size());
  for (auto r : rows) out.push_back(model::encode_video(m, items[r].frames->to_tensor()));
  return ad::concat_rows(out);
}

Tensor encode_q1_batch(const model::Model& m, const std::vector<TrainItem>& items,
                       std::span<const std::size_t> rows) {
  std::vector<std::string> texts;
  texts.reserve(rows.size());
  for (auto r : rows) texts.push_back(items[r].q1);
  return model::encode_texts(m, texts);
}

void require_frames(const std::vector<TrainItem>& items) {
  for (const auto& it : items) {
    if (!it.frames) throw DataError("training item for '" + it.video_id + "' has no frame features");
  }
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

double stage1_loss(const model::Model& m, const std::vector<TrainItem>& items, std::size_t batch_size,
                   ContrastiveMode mode) {
  require_frames(items);
  double total = 0.0;
  std::size_t batches = 0;
  const auto tau = Tensor::scalar(m.temperature.value());
  for (std::size_t start = 0; start < items.size(); start += batch_size) {
    const auto end = std::min(items.size(), start + batch_size);
    if (end - start < 2) continue;
    std::vector<std::size_t> rows(end - start);
    std::iota(rows.begin(), rows.end(), start);
    total += clip_loss(encode_q1_batch(m, items, rows), encode_video_batch(m, items, rows), tau, mode).item();
    ++batches;
  }
  if (batches == 0) throw ContractError("stage1_loss: need at least two items");
  return total / static_cast<double>(batches);
}

TrainReport train_stage1(model::Model& m, const std::vector<TrainItem>& items, const TrainConfig& config,
                         const std::vector<TrainItem>* heldout) {
  config.validate();
  require_frames(items);
  if (items.size() < config.batch_size) {
    throw ContractError("train_stage1: " + std::to_string(items.size()) +
                        " training items, fewer than batch_size=" + std::to_string(config.batch_size));
  }
  const auto start_time = std::chrono::steady_clock::now();
  TrainReport report;
  report.stage = "stage1";
  report.seed = config.seed;
  report.initial_loss = stage1_loss(m, items, config.batch_size, config.loss);
  if (heldout) report.heldout_curve.push_back(stage1_loss(m, *heldout, config.batch_size, config.loss));

  Adam optimizer(m.stage1_parameters(), config);
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const auto end = std::min(order.size(), start + config.batch_size);
      if (end - start < 2) continue;
      const std::span<const std::size_t> rows(order.data() + start, end - start);
      try {
        ad::Tape tape;
        const auto loss = clip_loss(encode_q1_batch(m, items, rows), encode_video_batch(m, items, rows),
                                    temperature(m.temperature.log_tau), config.loss);
        tape.backward(loss);
        optimizer.step();
        total += loss.item();
      } catch (const NumericError& e) {
        throw TrainingError("stage I diverged at epoch " + std::to_string(epoch) + ", batch starting at " +
                            std::to_string(start) + ": " + e.what());
      }
      ++batches;
    }
    report.loss_curve.push_back(total / static_cast<double>(batches));
    if (heldout) report.heldout_curve.push_back(stage1_loss(m, *heldout, config.batch_size, config.loss));
  }
  report.final_tau = m.temperature.value();
  report.wall_seconds = seconds_since(start_time);
  return report;
}

std::vector<std::string> mine_hard_negatives(std::span<const double> q1_embedding,
                                             const std::string& positive_id,
                                             const retrieval::EmbeddingIndex& index, std::size_t n) {
  if (index.empty() || n == 0) return {};
  const auto ranked = retrieval::stage1_retrieve(q1_embedding, index, n + 1);
  std::vector<std::string> out;
  for (const auto& e : ranked.entries) {
    if (e.video_id == positive_id) continue;
    if (out.size() == n) break;
    out.push_back(e.video_id);
  }
  return out;
}

namespace {

struct Stage2Data {
  Tensor z_q1, z_q2;                       // [n×d]
  std::vector<std::size_t> positive;       // index row of each item's video
  std::vector<std::vector<std::size_t>> negatives;  // hard negatives, index rows
  std::vector<std::vector<std::size_t>> pool;       // rest of the candidate pool, index rows
};

Tensor index_rows(const retrieval::EmbeddingIndex& index, std::span<const std::size_t> rows) {
  std::vector<double> out;
  out.reserve(rows.size() * index.dim());
  for (auto r : rows) {
    const auto row = index.row(r);
    out.insert(out.end(), row.begin(), row.end());
  }
  return Tensor({rows.size(), index.dim()}, std::move(out));
}

// Scores of the positives [B×1] and of every hard negative [P×1] for a batch.
std::pair<Tensor, Tensor> batch_scores(const model::Model& m, const Stage2Data& data,
                                       const std::vector<std::vector<std::size_t>>& negatives,
                                       const retrieval::EmbeddingIndex& index,
                                       std::span<const std::size_t> rows, model::FusionMode mode,
                                       std::vector<std::size_t>& owner) {
  const auto z_f = model::fuse(m, ad::gather_rows(data.z_q1, rows), ad::gather_rows(data.z_q2, rows), mode);
  std::vector<std::size_t> pos_rows, neg_rows;
  owner.clear();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    pos_rows.push_back(data.positive[rows[i]]);
    for (auto neg : negatives[rows[i]]) {
      neg_rows.push_back(neg);
      owner.push_back(i);
    }
  }
  auto s_pos = model::rerank_scores(m, z_f, index_rows(index, pos_rows));
  if (neg_rows.empty()) return {s_pos, Tensor()};
  auto s_neg = model::rerank_scores(m, ad::gather_rows(z_f, owner), index_rows(index, neg_rows));
  return {s_pos, s_neg};
}

double score_gap(const model::Model& m, const Stage2Data& data, const retrieval::EmbeddingIndex& index,
                 model::FusionMode mode) {
  std::vector<std::size_t> rows(data.positive.size()), owner;
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  const auto [s_pos, s_neg] = batch_scores(m, data, data.negatives, index, rows, mode, owner);
  auto mean_of = [](const Tensor& t) {
    if (!t.defined() || t.numel() == 0) return 0.0;
    double s = 0.0;
    for (auto v : t.data()) s += v;
    return s / static_cast<double>(t.numel());
  };
  return mean_of(s_pos) - mean_of(s_neg);
}

}  // namespace

TrainReport train_stage2(model::Model& m, const std::vector<TrainItem>& items,
                         const retrieval::EmbeddingIndex& index, const TrainConfig& config) {
  config.validate();
  if (items.empty()) throw ContractError("train_stage2: no training items");
  const auto start_time = std::chrono::steady_clock::now();

  // Stage-I encoders are frozen: query embeddings are computed once, outside any tape.
  Stage2Data data;
  std::vector<std::string> q1s, q2s;
  for (const auto& it : items) {
    q1s.push_back(it.q1);
    q2s.push_back(it.q2);
    const auto pos = index.position(it.video_id);
    if (!pos) throw DataError("train_stage2: positive video '" + it.video_id + "' is not in the index");
    data.positive.push_back(*pos);
  }
  data.z_q1 = model::encode_texts(m, q1s).detach();
  data.z_q2 = model::encode_texts(m, q2s).detach();
  const auto d = m.config().d;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const std::span<const double> q(data.z_q1.data().data() + i * d, d);
    std::vector<std::size_t> rows, pool;
    const auto ranked = mine_hard_negatives(q, items[i].video_id, index, config.hard_negatives + config.pool_negatives_from);
    for (std::size_t r = 0; r < ranked.size(); ++r) {
      (r < config.hard_negatives ? rows : pool).push_back(*index.position(ranked[r]));
    }
    data.negatives.push_back(std::move(rows));
    data.pool.push_back(std::move(pool));
  }

  TrainReport report;
  report.stage = "stage2";
  report.seed = config.seed;
  report.score_gap_curve.push_back(score_gap(m, data, index, config.fusion));
  {
    std::vector<std::size_t> rows(items.size()), owner;
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    const auto [s_pos, s_neg] = batch_scores(m, data, data.negatives, index, rows, config.fusion, owner);
    report.initial_loss = s_neg.defined() ? margin_ranking_loss(s_pos, s_neg, owner, config.margin).item() : 0.0;
  }

  Adam optimizer(m.stage2_parameters(), config);
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(items.size()), owner;
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    auto epoch_negatives = data.negatives;
    for (std::size_t i = 0; i < items.size(); ++i) {
      std::sample(data.pool[i].begin(), data.pool[i].end(), std::back_inserter(epoch_negatives[i]),
                  static_cast<std::ptrdiff_t>(config.pool_negatives), rng);
    }
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const auto end = std::min(order.size(), start + config.batch_size);
      const std::span<const std::size_t> rows(order.data() + start, end - start);
      try {
        ad::Tape tape;
        const auto [s_pos, s_neg] = batch_scores(m, data, epoch_negatives, index, rows, config.fusion, owner);
        if (!s_neg.defined()) continue;
        const auto loss = margin_ranking_loss(s_pos, s_neg, owner, config.margin);
        if (loss.requires_grad()) {
          tape.backward(loss);
          optimizer.step();
        }
        total += loss.item();
      } catch (const NumericError& e) {
        throw TrainingError("stage II diverged at epoch " + std::to_string(epoch) + ": " + e.what());
      }
      ++batches;
    }
    report.loss_curve.push_back(batches ? total / static_cast<double>(batches) : 0.0);
    report.score_gap_curve.push_back(score_gap(m, data, index, config.fusion));
  }
  report.final_tau = m.temperature.value();
  report.wall_seconds = seconds_since(start_time);
  return report;
}

}  // namespace datr::train
