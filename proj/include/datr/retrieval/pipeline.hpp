#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "datr/model/model.hpp"
#include "datr/retrieval/index.hpp"

namespace datr::retrieval {

enum class Stage { kStage1, kStage2 };

struct RankedEntry {
  std::string video_id;
  double stage1_score = 0.0;  // cosine against the stage-I query
  std::optional<double> stage2_score;

  bool operator==(const RankedEntry&) const = default;
};

// Ordered descending by the governing score. Stage I breaks ties by video id
// ascending; stage II by stage-I score descending, then video id ascending.
struct RankedList {
  Stage stage = Stage::kStage1;
  std::vector<RankedEntry> entries;
  // Set when fewer candidates than requested were available.
  bool clamped = false;

  std::vector<std::string> ids() const;
  bool operator==(const RankedList&) const = default;
};

// Exact cosine Top-min(K, N) of a unit query against every index row.
RankedList stage1_retrieve(std::span<const double> query, const EmbeddingIndex& index, std::size_t k);
RankedList stage1_retrieve(const std::string& q1, const model::Model& m,
                           const EmbeddingIndex& index, std::size_t k);

// Scores every candidate with the cross-encoder against fuse(z_q1, z_q2),
// reusing the indexed video embeddings, and keeps the Top-M.
RankedList stage2_rerank(std::span<const double> z_q1, std::span<const double> z_q2,
                         const RankedList& candidates, const model::Model& m,
                         const EmbeddingIndex& index, std::size_t top_m, model::FusionMode mode);
RankedList stage2_rerank(const std::string& q1, const std::string& q2, const RankedList& candidates,
                         const model::Model& m, const EmbeddingIndex& index, std::size_t top_m,
                         model::FusionMode mode);

struct PipelineConfig {
  std::size_t k = 100;
  std::size_t m = 10;
  bool stage2 = true;
  model::FusionMode fusion = model::FusionMode::kFull;
  // Retrieve stage-I candidates with the latest turn instead of q1.
  bool candidates_from_latest = false;

  void validate() const;
};

struct SessionState {
  std::string session_id;
  std::vector<std::string> turns;
  RankedList candidates;  // stage-I candidate set of the latest turn
  RankedList last;
};

struct TurnResult {
  std::size_t turn = 0;  // 1-based
  RankedList results;
  // Stage-I order of the candidate head, present from turn 2 on.
  std::optional<RankedList> stage1_order;
  PipelineConfig config;
};

// Turn 1 runs stage I only. Later turns retrieve candidates with q1 and
// re-rank them with fuse(q1, latest turn); with stage 2 off the stage-I head
// of length M is returned.
TurnResult run_pipeline(SessionState& session, const std::string& query, const model::Model& m,
                        const EmbeddingIndex& index, const PipelineConfig& config);

// Total ranking of every index entry for evaluation: the stage-I full sort,
// with the first `rerank_depth` entries re-ordered by stage II when enabled.
std::vector<std::string> rank_all(const std::string& q1, const std::string& q2, const model::Model& m,
                                  const EmbeddingIndex& index, bool stage2, std::size_t rerank_depth,
                                  model::FusionMode mode);

}  // namespace datr::retrieval
