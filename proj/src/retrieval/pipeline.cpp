#include "datr/retrieval/pipeline.hpp"

#include <algorithm>
#include <numeric>

#include "datr/autodiff/ops.hpp"
#include "datr/error.hpp"

namespace datr::retrieval {

std::vector<std::string> RankedList::ids() const {
  std::vector<std::string> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.video_id);
  return out;
}

namespace {

std::vector<double> cosine_scores(std::span<const double> query, const EmbeddingIndex& index) {
  const auto n = index.size(), d = index.dim();
  const double* rows = index.matrix().data();
  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = rows + i * d;
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) acc += row[j] * query[j];
    scores[i] = acc;
  }
  return scores;
}

std::vector<std::size_t> stage1_order(const std::vector<double>& scores, const EmbeddingIndex& index,
                                      std::size_t k) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto& ids = index.ids();
  auto better = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids[a] < ids[b];
  };
  k = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), better);
  order.resize(k);
  return order;
}

void sort_stage2(std::vector<RankedEntry>& entries) {
  std::sort(entries.begin(), entries.end(), [](const RankedEntry& a, const RankedEntry& b) {
    if (*a.stage2_score != *b.stage2_score) return *a.stage2_score > *b.stage2_score;
    if (a.stage1_score != b.stage1_score) return a.stage1_score > b.stage1_score;
    return a.video_id < b.video_id;
  });
}

std::vector<double> as_vector(const ad::Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

RankedList stage1_retrieve(std::span<const double> query, const EmbeddingIndex& index, std::size_t k) {
  if (k < 1) throw ContractError("stage1_retrieve: K must be >= 1");
  if (index.empty()) throw ContractError("stage1_retrieve: index is empty");
  if (query.size() != index.dim()) {
    throw DimensionError("stage1_retrieve: query width " + std::to_string(query.size()) +
                         " does not match index width " + std::to_string(index.dim()));
  }
  const auto scores = cosine_scores(query, index);
  RankedList out;
  out.stage = Stage::kStage1;
  for (auto i : stage1_order(scores, index, k)) {
    out.entries.push_back({index.ids()[i], scores[i], std::nullopt});
  }
  return out;
}

RankedList stage1_retrieve(const std::string& q1, const model::Model& m, const EmbeddingIndex& index,
                           std::size_t k) {
  const auto z = model::encode_text(m, q1);
  return stage1_retrieve(z.data(), index, k);
}

RankedList stage2_rerank(std::span<const double> z_q1, std::span<const double> z_q2,
                         const RankedList& candidates, const model::Model& m,
                         const EmbeddingIndex& index, std::size_t top_m, model::FusionMode mode) {
  if (top_m < 1) throw ContractError("stage2_rerank: M must be >= 1");
  RankedList out;
  out.stage = Stage::kStage2;
  if (top_m > candidates.entries.size()) out.clamped = true;
  if (candidates.entries.empty()) return out;

  const auto z_f = model::fuse(m, ad::Tensor::row(z_q1), ad::Tensor::row(z_q2), mode);
  const auto p = candidates.entries.size();
  const auto d = index.dim();
  std::vector<double> videos;
  videos.reserve(p * d);
  for (const auto& c : candidates.entries) {
    const auto pos = index.position(c.video_id);
    if (!pos) throw DataError("stage2_rerank: candidate '" + c.video_id + "' is not in the index");
    const auto row = index.row(*pos);
    videos.insert(videos.end(), row.begin(), row.end());
  }
  const std::vector<std::size_t> repeat(p, 0);
  const auto scores = model::rerank_scores(m, ad::gather_rows(z_f, repeat),
                                           ad::Tensor({p, d}, std::move(videos)));
  out.entries = candidates.entries;
  for (std::size_t i = 0; i < p; ++i) out.entries[i].stage2_score = scores.data()[i];
  sort_stage2(out.entries);
  out.entries.resize(std::min(top_m, p));
  return out;
}

RankedList stage2_rerank(const std::string& q1, const std::string& q2, const RankedList& candidates,
                         const model::Model& m, const EmbeddingIndex& index, std::size_t top_m,
                         model::FusionMode mode) {
  const auto z1 = as_vector(model::encode_text(m, q1));
  const auto z2 = as_vector(model::encode_text(m, q2));
  return stage2_rerank(z1, z2, candidates, m, index, top_m, mode);
}

void PipelineConfig::validate() const {
  if (m < 1 || k < m) {
    throw ConfigError("pipeline needs K >= M >= 1, got K=" + std::to_string(k) + ", M=" + std::to_string(m));
  }
}

TurnResult run_pipeline(SessionState& session, const std::string& query, const model::Model& m,
                        const EmbeddingIndex& index, const PipelineConfig& config) {
  config.validate();
  if (query.empty()) throw ContractError("run_pipeline: empty query");
  session.turns.push_back(query);
  TurnResult result;
  result.turn = session.turns.size();
  result.config = config;

  const auto& q1 = session.turns.front();
  const auto& candidate_query = config.candidates_from_latest ? session.turns.back() : q1;
  session.candidates = stage1_retrieve(candidate_query, m, index, config.k);

  RankedList head = session.candidates;
  head.clamped = config.m > head.entries.size();
  head.entries.resize(std::min(config.m, head.entries.size()));

  if (result.turn == 1 || !config.stage2) {
    result.results = head;
  } else {
    result.results = stage2_rerank(q1, session.turns.back(), session.candidates, m, index, config.m,
                                   config.fusion);
  }
  if (result.turn >= 2) result.stage1_order = head;
  session.last = result.results;
  return result;
}

std::vector<std::string> rank_all(const std::string& q1, const std::string& q2, const model::Model& m,
                                  const EmbeddingIndex& index, bool stage2, std::size_t rerank_depth,
                                  model::FusionMode mode) {
  const auto z1 = as_vector(model::encode_text(m, q1));
  auto full = stage1_retrieve(z1, index, index.size());
  if (!stage2 || rerank_depth == 0) return full.ids();
  const auto depth = std::min(rerank_depth, full.entries.size());
  RankedList head;
  head.entries.assign(full.entries.begin(), full.entries.begin() + static_cast<std::ptrdiff_t>(depth));
  const auto z2 = as_vector(model::encode_text(m, q2));
  auto reranked = stage2_rerank(z1, z2, head, m, index, depth, mode).ids();
  for (std::size_t i = depth; i < full.entries.size(); ++i) reranked.push_back(full.entries[i].video_id);
  return reranked;
}

}  // namespace datr::retrieval
