#include "datr/evaluation/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <nlohmann/json.hpp>
#include <random>
#include <set>

#include "datr/error.hpp"
#include "datr/retrieval/pipeline.hpp"

namespace datr::eval {

std::string EvalResult::to_json() const {
  nlohmann::ordered_json j;
  j["config"] = config;
  for (auto k : kRecallCutoffs) j["R@" + std::to_string(k)] = recall_at.at(k);
  j["MedR"] = med_rank;
  j["MeanR"] = mean_rank;
  j["n_queries"] = n_queries;
  j["skipped"] = skipped;
  return j.dump(2);
}

std::size_t rank_of_truth(std::span<const std::string> ranked, const std::string& truth_id) {
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    if (ranked[i] == truth_id) return i + 1;
  }
  throw DataError("ground-truth video '" + truth_id + "' is not in the ranking");
}

EvalResult compute_metrics(std::span<const std::size_t> ranks) {
  if (ranks.empty()) throw ContractError("compute_metrics: empty rank list");
  std::vector<std::size_t> sorted(ranks.begin(), ranks.end());
  std::sort(sorted.begin(), sorted.end());
  if (sorted.front() < 1) throw ContractError("compute_metrics: ranks are 1-based");

  EvalResult out;
  const auto n = sorted.size();
  out.n_queries = n;
  for (auto k : kRecallCutoffs) {
    const auto hits = static_cast<std::size_t>(std::upper_bound(sorted.begin(), sorted.end(), k) - sorted.begin());
    out.recall_at[k] = static_cast<double>(hits) / static_cast<double>(n);
  }
  out.med_rank = n % 2 == 1 ? static_cast<double>(sorted[n / 2])
                            : (static_cast<double>(sorted[n / 2 - 1]) + static_cast<double>(sorted[n / 2])) / 2.0;
  double total = 0.0;
  for (auto r : sorted) total += static_cast<double>(r);
  out.mean_rank = total / static_cast<double>(n);
  return out;
}

std::string EvalConfig::descriptor() const {
  return std::string("stage2=") + (stage2 ? "on" : "off") + " k=" + std::to_string(k) +
         " fusion=" + model::to_string(fusion);
}

EvalResult evaluate(const std::vector<data::TripletRecord>& test, const model::Model& m,
                    const retrieval::EmbeddingIndex& index, const EvalConfig& config) {
  std::vector<std::size_t> ranks;
  std::size_t skipped = 0;
  for (const auto& t : test) {
    if (!index.position(t.video_id)) {
      ++skipped;
      continue;
    }
    const auto ranked = retrieval::rank_all(t.q1, t.q2, m, index, config.stage2, config.k, config.fusion);
    ranks.push_back(rank_of_truth(ranked, t.video_id));
  }
  if (ranks.empty()) throw DataError("evaluate: no test triplet has an indexed video");
  auto out = compute_metrics(ranks);
  out.skipped = skipped;
  out.config = config.descriptor();
  return out;
}

std::string metrics_table(const std::vector<std::pair<std::string, const EvalResult*>>& rows) {
  std::size_t width = 6;
  for (const auto& [label, _] : rows) width = std::max(width, label.size());
  auto pad = [](std::string s, std::size_t w) {
    s.resize(std::max(s.size(), w), ' ');
    return s;
  };
  std::string out = pad("Config", width);
  for (auto k : kRecallCutoffs) out += "  " + pad("R@" + std::to_string(k), 6);
  out += "  " + pad("MedR", 7) + "  MeanR\n";
  for (const auto& [label, r] : rows) {
    out += pad(label, width);
    char buf[32];
    if (!r) {
      out += "  absent\n";
      continue;
    }
    for (auto k : kRecallCutoffs) {
      std::snprintf(buf, sizeof buf, "%6.1f", 100.0 * r->recall_at.at(k));
      out += "  " + std::string(buf);
    }
    std::snprintf(buf, sizeof buf, "%7.1f", r->med_rank);
    out += "  " + std::string(buf);
    std::snprintf(buf, sizeof buf, "%7.2f", r->mean_rank);
    out += "  " + std::string(buf) + "\n";
  }
  return out;
}

std::string Split::to_json() const {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["train_videos"] = train_videos;
  j["test_videos"] = test_videos;
  return j.dump(2) + "\n";
}

Split Split::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    Split s;
    s.seed = j.value("seed", std::uint64_t{0});
    s.train_videos = j.at("train_videos").get<std::vector<std::string>>();
    s.test_videos = j.at("test_videos").get<std::vector<std::string>>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("split file: ") + e.what());
  }
}

Split grouped_split(const std::vector<data::ManifestEntry>& manifest, std::uint64_t seed,
                    double test_fraction) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("test fraction must lie in (0, 1)");
  std::map<std::string, std::size_t> group_size;
  for (const auto& e : manifest) {
    if (e.source_id.empty()) throw DataError("video '" + e.video_id + "' has no source_id");
    ++group_size[e.source_id];
  }
  if (group_size.size() < 2) {
    throw SplitError("grouped split needs at least two sources, found " + std::to_string(group_size.size()));
  }
  std::vector<std::string> sources;
  for (const auto& [s, _] : group_size) sources.push_back(s);
  std::mt19937_64 rng(seed);
  std::shuffle(sources.begin(), sources.end(), rng);

  const double n = static_cast<double>(manifest.size());
  const double target = test_fraction * n;
  std::set<std::string> test_sources;
  double in_test = 0.0;
  for (const auto& s : sources) {
    const double g = static_cast<double>(group_size[s]);
    if (test_sources.size() + 1 == sources.size()) break;  // keep one source for training
    if (std::abs(in_test + g - target) < std::abs(in_test - target)) {
      test_sources.insert(s);
      in_test += g;
    }
  }
  if (test_sources.empty() || std::abs(in_test / n - test_fraction) > 0.05 + 1e-12) {
    throw SplitError("no grouping of " + std::to_string(sources.size()) + " sources puts " +
                     std::to_string(test_fraction) + " of the videos in test (best: " +
                     std::to_string(in_test / n) + ")");
  }
  Split out;
  out.seed = seed;
  for (const auto& e : manifest) {
    (test_sources.count(e.source_id) ? out.test_videos : out.train_videos).push_back(e.video_id);
  }
  return out;
}

std::vector<data::TripletRecord> triplets_for(const data::Corpus& corpus,
                                              const std::vector<std::string>& videos) {
  const std::set<std::string> wanted(videos.begin(), videos.end());
  std::vector<data::TripletRecord> out;
  for (const auto& t : corpus.triplets) {
    if (wanted.count(t.video_id)) out.push_back(t);
  }
  return out;
}

}  // namespace datr::eval
