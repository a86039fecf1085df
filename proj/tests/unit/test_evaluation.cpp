#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <map>
#include <random>
#include <set>

#include "datr/data/synthetic.hpp"
#include "datr/error.hpp"
#include "datr/evaluation/ablation.hpp"
#include "datr/retrieval/pipeline.hpp"
#include "support/temp_dir.hpp"

using namespace datr;
using namespace datr::eval;

namespace {

std::vector<data::ManifestEntry> grouped_manifest(std::size_t sources, std::size_t per_source) {
  std::vector<data::ManifestEntry> m;
  for (std::size_t s = 0; s < sources; ++s)
    for (std::size_t v = 0; v < per_source; ++v)
      m.push_back({"v" + std::to_string(s) + "-" + std::to_string(v), "", "s" + std::to_string(s)});
  return m;
}

struct Small {
  testing::TempDir dir;
  data::Corpus corpus;
  Split split;

  Small() {
    data::SyntheticSpec spec;
    spec.n_topics = 5;
    spec.details_per_topic = 3;
    spec.videos_per_detail = 2;
    spec.n_frames = 8;
    spec.d_in = 6;
    data::write_synthetic_corpus(dir.str(), data::generate_synthetic_corpus(spec));
    corpus = data::Corpus::load(dir.str());
    split = grouped_split(corpus.manifest, 0);
  }

  model::ModelConfig base() const {
    model::ModelConfig c;
    c.d = 16;
    c.heads = 4;
    c.layers = 3;
    return c;
  }
};

}  // namespace

TEST_CASE("metric examples") {
  const std::vector<std::size_t> a{1, 3, 12};
  const auto r = compute_metrics(a);
  CHECK(r.recall_at.at(1) == doctest::Approx(1.0 / 3.0));
  CHECK(r.recall_at.at(5) == doctest::Approx(2.0 / 3.0));
  CHECK(r.recall_at.at(10) == doctest::Approx(2.0 / 3.0));
  CHECK(r.recall_at.at(50) == 1.0);
  CHECK(r.med_rank == 3.0);
  CHECK(r.mean_rank == doctest::Approx(16.0 / 3.0));
  CHECK(r.n_queries == 3);

  const std::vector<std::size_t> even{2, 4};
  CHECK(compute_metrics(even).med_rank == 3.0);
  CHECK(compute_metrics(even).recall_at.at(1) == 0.0);

  CHECK_THROWS_AS(compute_metrics(std::vector<std::size_t>{}), ContractError);
  CHECK_THROWS_AS(compute_metrics(std::vector<std::size_t>{1, 0}), ContractError);
}

TEST_CASE("metrics match the definitions on random rank lists") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 300; ++trial) {
    const auto n = std::uniform_int_distribution<std::size_t>(1, 80)(rng);
    std::vector<std::size_t> ranks(n);
    for (auto& x : ranks) x = std::uniform_int_distribution<std::size_t>(1, 150)(rng);
    const auto r = compute_metrics(ranks);
    for (auto k : kRecallCutoffs) {
      const auto hits = std::count_if(ranks.begin(), ranks.end(), [&](std::size_t x) { return x <= k; });
      CHECK(r.recall_at.at(k) == static_cast<double>(hits) / static_cast<double>(n));
    }
    auto sorted = ranks;
    std::sort(sorted.begin(), sorted.end());
    const double med = n % 2 == 1 ? static_cast<double>(sorted[n / 2])
                                  : (static_cast<double>(sorted[n / 2 - 1]) + static_cast<double>(sorted[n / 2])) / 2.0;
    CHECK(r.med_rank == med);
    double total = 0.0;
    for (auto x : ranks) total += static_cast<double>(x);
    CHECK(std::abs(r.mean_rank - total / static_cast<double>(n)) < 1e-12);
  }
}

TEST_CASE("rank_of_truth") {
  const std::vector<std::string> ranked{"b", "a", "c"};
  CHECK(rank_of_truth(ranked, "b") == 1);
  CHECK(rank_of_truth(ranked, "c") == 3);
  CHECK_THROWS_AS(rank_of_truth(ranked, "z"), DataError);
}

TEST_CASE("metrics serialize") {
  const auto r = compute_metrics(std::vector<std::size_t>{1, 2});
  const auto j = r.to_json();
  CHECK(j.find("\"R@1\"") != std::string::npos);
  CHECK(j.find("\"MedR\"") != std::string::npos);
  const auto table = metrics_table({{"with", &r}, {"without", nullptr}});
  CHECK(table.find("absent") != std::string::npos);
  CHECK(table.find("50.0") != std::string::npos);
}

TEST_CASE("grouped split") {
  const auto m = grouped_manifest(10, 10);
  const auto s = grouped_split(m, 7);
  CHECK(s.test_videos.size() == 20);
  CHECK(s.train_videos.size() == 80);
  std::set<std::string> test_sources;
  for (const auto& v : s.test_videos) test_sources.insert(v.substr(1, v.find('-') - 1));
  CHECK(test_sources.size() == 2);

  CHECK(grouped_split(m, 7).to_json() == s.to_json());
  CHECK(Split::from_json(s.to_json()).test_videos == s.test_videos);
  CHECK(Split::from_json(s.to_json()).seed == 7);

  // No source ever lands on both sides.
  std::mt19937_64 rng(4);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    std::vector<data::ManifestEntry> mixed;
    const auto groups = std::uniform_int_distribution<std::size_t>(5, 30)(rng);
    for (std::size_t g = 0; g < groups; ++g) {
      const auto size = std::uniform_int_distribution<std::size_t>(1, 4)(rng);
      for (std::size_t v = 0; v < size; ++v)
        mixed.push_back({"g" + std::to_string(g) + "v" + std::to_string(v), "", "g" + std::to_string(g)});
    }
    Split sp;
    try {
      sp = grouped_split(mixed, seed);
    } catch (const SplitError&) {
      continue;
    }
    std::map<std::string, std::string> source_of;
    for (const auto& e : mixed) source_of[e.video_id] = e.source_id;
    std::set<std::string> train_src, test_src;
    for (const auto& v : sp.train_videos) train_src.insert(source_of[v]);
    for (const auto& v : sp.test_videos) test_src.insert(source_of[v]);
    for (const auto& src : test_src) CHECK(train_src.count(src) == 0);
    CHECK(sp.train_videos.size() + sp.test_videos.size() == mixed.size());
    const double frac = static_cast<double>(sp.test_videos.size()) / static_cast<double>(mixed.size());
    CHECK(std::abs(frac - 0.2) <= 0.05 + 1e-12);
  }

  CHECK_THROWS_AS(grouped_split(grouped_manifest(1, 10), 0), SplitError);
  // Two equal sources cannot give a fifth.
  CHECK_THROWS_AS(grouped_split(grouped_manifest(2, 5), 0), SplitError);
}

TEST_CASE("stage-I evaluation equals the full-sort rank") {
  Small s;
  const auto m = model::Model::initialize(train::model_config_for(s.corpus, s.base()), 3);
  const auto index = retrieval::build_index(s.corpus, s.split.test_videos, m);
  const auto test = triplets_for(s.corpus, s.split.test_videos);
  REQUIRE(!test.empty());
  EvalConfig cfg;
  cfg.stage2 = false;
  const auto r = evaluate(test, m, index, cfg);

  std::vector<std::size_t> ranks;
  for (const auto& t : test) {
    const auto all = retrieval::stage1_retrieve(t.q1, m, index, index.size()).ids();
    ranks.push_back(static_cast<std::size_t>(std::find(all.begin(), all.end(), t.video_id) - all.begin()) + 1);
  }
  const auto expected = compute_metrics(ranks);
  CHECK(r.recall_at == expected.recall_at);
  CHECK(r.med_rank == expected.med_rank);
  CHECK(r.mean_rank == expected.mean_rank);
  CHECK(r.skipped == 0);

  // Items outside the index are counted as skipped.
  const auto all_test = triplets_for(s.corpus, s.corpus.video_ids());
  CHECK(evaluate(all_test, m, index, cfg).skipped == all_test.size() - test.size());
}

TEST_CASE("ablation suite reports absent rows") {
  Small s;
  testing::TempDir ckpt;
  train::TrainConfig t1;
  t1.epochs = 1;
  t1.batch_size = 8;
  auto t2 = t1;
  t2.hard_negatives = 2;
  t2.pool_negatives = 2;
  t2.pool_negatives_from = 5;
  std::vector<std::string> log;
  train_ablation_checkpoints(s.corpus, s.split, ckpt.str(), {0}, t1, t2, s.base(),
                             [&](const std::string& line) { log.push_back(line); });
  CHECK(!log.empty());

  AblationSpec spec;
  spec.seeds = {0};
  spec.k = 10;
  spec.scope_k = 5;
  const auto full = ablation_suite(s.corpus, s.split, ckpt.str(), spec);
  CHECK(full.rows.size() == 9);
  for (const auto& row : full.rows) CHECK(row.result.has_value());
  const auto* with = full.find("Stage II", "with");
  const auto* bidir = full.find("CLIP loss", "bidirectional");
  REQUIRE(with);
  REQUIRE(bidir);
  CHECK(with->result->to_json() != "");
  CHECK(with->result->recall_at == bidir->result->recall_at);

  std::filesystem::remove(stage2_checkpoint_path(ckpt.str(), 0, model::FusionMode::kMulOnly,
                                                 train::ContrastiveMode::kBidirectional));
  const auto partial = ablation_suite(s.corpus, s.split, ckpt.str(), spec);
  const auto* mul = partial.find("Fusion", "mul only");
  REQUIRE(mul);
  CHECK(!mul->result);
  CHECK(mul->missing.find("stage2-mul") != std::string::npos);
  CHECK(partial.find("Fusion", "add only")->result.has_value());
  CHECK(partial.to_text().find("absent") != std::string::npos);
}

TEST_CASE("average_results") {
  const auto a = compute_metrics(std::vector<std::size_t>{1, 1});
  const auto b = compute_metrics(std::vector<std::size_t>{3, 5});
  const auto avg = average_results({a, b});
  CHECK(avg.recall_at.at(1) == 0.5);
  CHECK(avg.med_rank == doctest::Approx(2.5));
  CHECK(avg.mean_rank == doctest::Approx(2.5));
}
