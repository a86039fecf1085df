#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "datr/autodiff/checkpoint.hpp"
#include "datr/data/corpus.hpp"
#include "datr/model/model.hpp"
#include "datr/retrieval/index.hpp"

namespace datr::train {

enum class ContrastiveMode { kBidirectional, kTextToVideo };

std::string to_string(ContrastiveMode mode);
ContrastiveMode parse_contrastive_mode(const std::string& text);

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t epochs = 30;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  std::size_t hard_negatives = 7;
  // Stage II also draws pool_negatives per item and epoch, uniformly from the
  // stage-I candidates ranked below the hard negatives, within the top
  // hard_negatives + pool_negatives_from.
  std::size_t pool_negatives = 8;
  std::size_t pool_negatives_from = 93;
  double margin = 0.2;
  ContrastiveMode loss = ContrastiveMode::kBidirectional;
  model::FusionMode fusion = model::FusionMode::kFull;

  void validate() const;
};

struct TrainReport {
  std::string stage;
  std::uint64_t seed = 0;
  double initial_loss = 0.0;
  std::vector<double> loss_curve;     // mean batch loss per epoch
  std::vector<double> heldout_curve;  // entry 0 is before training
  // Stage II: mean s(pos) − mean s(hard negative) over training items;
  // entry 0 is before training.
  std::vector<double> score_gap_curve;
  double final_tau = 0.0;
  double wall_seconds = 0.0;

  // Wall-clock is omitted unless asked for, so reports stay reproducible.
  std::string to_json(bool include_timing = false) const;
};

// One training example: a triplet joined with its frame features.
struct TrainItem {
  std::string q1;
  std::string q2;
  std::string video_id;
  const data::FrameFeatures* frames = nullptr;
};

// Items for the given videos (in triplet order). Triplets whose features are
// missing are skipped.
std::vector<TrainItem> make_items(const data::Corpus& corpus, const std::vector<std::string>& video_ids);

// `base` with the corpus vocabulary (every q1/q2 word) and frame shape.
model::ModelConfig model_config_for(const data::Corpus& corpus, model::ModelConfig base = {});

// Effective temperature clamp(exp(log_tau), kTauMin, kTauMax) as a graph node.
ad::Tensor temperature(const ad::Tensor& log_tau);

// Symmetric InfoNCE over aligned unit-norm batches [B×d]; row i is the
// positive pair. t2v-only mode returns the text-to-video term alone.
ad::Tensor clip_loss(const ad::Tensor& z_text, const ad::Tensor& z_video, const ad::Tensor& tau,
                     ContrastiveMode mode = ContrastiveMode::kBidirectional);

// mean over pairs of max(0, margin − s_pos[owner] + s_neg), s_pos [B×1],
// s_neg [P×1], owner[p] is the row of s_pos that negative p belongs to.
ad::Tensor margin_ranking_loss(const ad::Tensor& s_pos, const ad::Tensor& s_neg,
                               std::span<const std::size_t> owner, double margin);

class Adam {
 public:
  Adam(std::vector<ad::NamedTensor> params, const TrainConfig& config);
  // Applies one update from the accumulated grads, then zeroes them.
  void step();
  void zero_grad();

 private:
  std::vector<ad::NamedTensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

// Stage-I loss over items in fixed consecutive batches, without gradients.
double stage1_loss(const model::Model& m, const std::vector<TrainItem>& items, std::size_t batch_size,
                   ContrastiveMode mode);

// In-batch-negative contrastive training of the text encoder (on q1), the
// video encoder and tau. Throws TrainingError on a non-finite loss.
TrainReport train_stage1(model::Model& m, const std::vector<TrainItem>& items,
                         const TrainConfig& config, const std::vector<TrainItem>* heldout = nullptr);

// Top-(n+1) stage-I candidates for the query minus the positive, truncated to n.
std::vector<std::string> mine_hard_negatives(std::span<const double> q1_embedding,
                                             const std::string& positive_id,
                                             const retrieval::EmbeddingIndex& index, std::size_t n);

// Margin-ranking training of the fusion MLP and re-ranker against hard
// negatives mined from `index`. Stage-I parameters and tau are left untouched.
TrainReport train_stage2(model::Model& m, const std::vector<TrainItem>& items,
                         const retrieval::EmbeddingIndex& index, const TrainConfig& config);

}  // namespace datr::train
