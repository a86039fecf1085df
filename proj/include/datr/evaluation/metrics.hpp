#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "datr/data/corpus.hpp"
#include "datr/model/model.hpp"
#include "datr/retrieval/index.hpp"

namespace datr::eval {

inline constexpr std::array<std::size_t, 5> kRecallCutoffs{1, 5, 10, 50, 100};

struct EvalResult {
  std::map<std::size_t, double> recall_at;  // cutoff -> fraction
  double med_rank = 0.0;
  double mean_rank = 0.0;
  std::size_t n_queries = 0;
  std::size_t skipped = 0;  // test items whose video is not indexed
  std::string config;

  std::string to_json() const;
};

// 1-based position of truth_id in a total ranking. DataError if absent.
std::size_t rank_of_truth(std::span<const std::string> ranked, const std::string& truth_id);

// R@K = |{r <= K}| / n, MedR with the mean-of-middle-two rule, MeanR.
EvalResult compute_metrics(std::span<const std::size_t> ranks);

struct EvalConfig {
  bool stage2 = true;
  std::size_t k = 100;  // stage-II re-ranks the stage-I top-k
  model::FusionMode fusion = model::FusionMode::kFull;

  std::string descriptor() const;
};

// Ranks every indexed video for each test triplet: stage II re-orders the
// stage-I top-k and the tail keeps its stage-I order.
EvalResult evaluate(const std::vector<data::TripletRecord>& test, const model::Model& m,
                    const retrieval::EmbeddingIndex& index, const EvalConfig& config);

// Aligned plain-text table with one row per labelled result.
std::string metrics_table(const std::vector<std::pair<std::string, const EvalResult*>>& rows);

struct Split {
  std::vector<std::string> train_videos;
  std::vector<std::string> test_videos;
  std::uint64_t seed = 0;

  std::string to_json() const;
  static Split from_json(const std::string& text);
};

// Whole source groups go to one side. The test side holds test_fraction of
// the videos, within 5 percentage points. SplitError when that is impossible.
Split grouped_split(const std::vector<data::ManifestEntry>& manifest, std::uint64_t seed,
                    double test_fraction = 0.2);

// Triplets whose video is in `videos`, in corpus order.
std::vector<data::TripletRecord> triplets_for(const data::Corpus& corpus,
                                              const std::vector<std::string>& videos);

}  // namespace datr::eval
