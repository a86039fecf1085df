#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "datr/data/corpus.hpp"
#include "datr/evaluation/metrics.hpp"
#include "datr/training/trainer.hpp"

namespace datr::eval {

struct AblationSpec {
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::size_t k = 100;       // stage-I candidates re-ranked by stage II
  std::size_t scope_k = 20;  // the "top-K" side of the re-rank scope block
};

struct AblationRow {
  std::string block;
  std::string variant;
  std::optional<EvalResult> result;  // seed average; empty when absent
  std::vector<EvalResult> per_seed;
  std::string missing;  // first missing checkpoint, when absent
};

struct AblationTable {
  std::vector<AblationRow> rows;

  const AblationRow* find(const std::string& block, const std::string& variant) const;
  std::string to_text() const;
  std::string to_json() const;
};

// <dir>/seed<S>/stage1-<loss>.ckpt and <dir>/seed<S>/stage2-<fusion>-<loss>.ckpt
std::string stage1_checkpoint_path(const std::string& dir, std::uint64_t seed, train::ContrastiveMode loss);
std::string stage2_checkpoint_path(const std::string& dir, std::uint64_t seed, model::FusionMode fusion,
                                   train::ContrastiveMode loss);

// Mean of R@K, MedR and MeanR over runs.
EvalResult average_results(const std::vector<EvalResult>& runs);

// Evaluates every configuration on the test side of `split`. Indexes are
// rebuilt from each checkpoint over the test videos.
AblationTable ablation_suite(const data::Corpus& corpus, const Split& split, const std::string& checkpoint_dir,
                             const AblationSpec& spec);

using ProgressFn = std::function<void(const std::string&)>;

// Trains every checkpoint ablation_suite reads: stage I with both losses,
// stage II with all fusion modes on the bidirectional encoder and full
// fusion on the t2v encoder.
void train_ablation_checkpoints(const data::Corpus& corpus, const Split& split, const std::string& checkpoint_dir,
                                const std::vector<std::uint64_t>& seeds, const train::TrainConfig& stage1,
                                const train::TrainConfig& stage2, const model::ModelConfig& base,
                                const ProgressFn& progress = {});

}  // namespace datr::eval
