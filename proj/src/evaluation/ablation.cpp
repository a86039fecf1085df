#include "datr/evaluation/ablation.hpp"

#include <filesystem>
#include <limits>
#include <map>
#include <nlohmann/json.hpp>

#include "datr/autodiff/checkpoint.hpp"
#include "datr/error.hpp"
#include "datr/retrieval/index.hpp"

namespace datr::eval {

namespace fs = std::filesystem;
using model::FusionMode;
using train::ContrastiveMode;

const AblationRow* AblationTable::find(const std::string& block, const std::string& variant) const {
  for (const auto& r : rows) {
    if (r.block == block && r.variant == variant) return &r;
  }
  return nullptr;
}

std::string AblationTable::to_text() const {
  std::string out;
  std::string block;
  std::vector<std::pair<std::string, const EvalResult*>> group;
  auto flush = [&] {
    if (group.empty()) return;
    out += "[" + block + "]\n" + metrics_table(group) + "\n";
    group.clear();
  };
  for (const auto& r : rows) {
    if (r.block != block) flush();
    block = r.block;
    group.emplace_back(r.variant, r.result ? &*r.result : nullptr);
  }
  flush();
  return out;
}

std::string AblationTable::to_json() const {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json row;
    row["block"] = r.block;
    row["variant"] = r.variant;
    if (r.result) {
      row["result"] = nlohmann::ordered_json::parse(r.result->to_json());
      row["per_seed"] = nlohmann::ordered_json::array();
      for (const auto& s : r.per_seed) row["per_seed"].push_back(nlohmann::ordered_json::parse(s.to_json()));
    } else {
      row["result"] = nullptr;
      row["missing"] = r.missing;
    }
    j.push_back(row);
  }
  return j.dump(2) + "\n";
}

std::string stage1_checkpoint_path(const std::string& dir, std::uint64_t seed, ContrastiveMode loss) {
  return (fs::path(dir) / ("seed" + std::to_string(seed)) / ("stage1-" + train::to_string(loss) + ".ckpt"))
      .string();
}

std::string stage2_checkpoint_path(const std::string& dir, std::uint64_t seed, FusionMode fusion,
                                   ContrastiveMode loss) {
  return (fs::path(dir) / ("seed" + std::to_string(seed)) /
          ("stage2-" + model::to_string(fusion) + "-" + train::to_string(loss) + ".ckpt"))
      .string();
}

EvalResult average_results(const std::vector<EvalResult>& runs) {
  if (runs.empty()) throw ContractError("average_results: no runs");
  EvalResult out = runs.front();
  const double n = static_cast<double>(runs.size());
  for (auto k : kRecallCutoffs) {
    double s = 0.0;
    for (const auto& r : runs) s += r.recall_at.at(k);
    out.recall_at[k] = s / n;
  }
  double med = 0.0, mean = 0.0;
  for (const auto& r : runs) {
    med += r.med_rank;
    mean += r.mean_rank;
  }
  out.med_rank = med / n;
  out.mean_rank = mean / n;
  out.config += " seeds=" + std::to_string(runs.size());
  return out;
}

namespace {

struct RowSpec {
  std::string block;
  std::string variant;
  bool stage2_checkpoint;
  FusionMode fusion;
  ContrastiveMode loss;
  EvalConfig config;
};

std::vector<RowSpec> row_specs(const AblationSpec& spec) {
  const auto bi = ContrastiveMode::kBidirectional;
  auto cfg = [&](bool stage2, FusionMode f, std::size_t k) { return EvalConfig{stage2, k, f}; };
  const auto full = FusionMode::kFull;
  return {
      {"Stage II", "without", false, full, bi, cfg(false, full, spec.k)},
      {"Stage II", "with", true, full, bi, cfg(true, full, spec.k)},
      {"Fusion", "add only", true, FusionMode::kAddOnly, bi, cfg(true, FusionMode::kAddOnly, spec.k)},
      {"Fusion", "mul only", true, FusionMode::kMulOnly, bi, cfg(true, FusionMode::kMulOnly, spec.k)},
      {"Fusion", "add + mul + MLP", true, full, bi, cfg(true, full, spec.k)},
      {"CLIP loss", "text-to-video only", true, full, ContrastiveMode::kTextToVideo, cfg(true, full, spec.k)},
      {"CLIP loss", "bidirectional", true, full, bi, cfg(true, full, spec.k)},
      {"Re-rank scope", "full corpus", true, full, bi,
       cfg(true, full, std::numeric_limits<std::size_t>::max())},
      {"Re-rank scope", "top-" + std::to_string(spec.scope_k), true, full, bi, cfg(true, full, spec.scope_k)},
  };
}

struct Loaded {
  model::Model model;
  retrieval::EmbeddingIndex index;
};

}  // namespace

AblationTable ablation_suite(const data::Corpus& corpus, const Split& split, const std::string& checkpoint_dir,
                             const AblationSpec& spec) {
  if (spec.seeds.empty()) throw ConfigError("ablation needs at least one seed");
  const auto test = triplets_for(corpus, split.test_videos);
  std::map<std::string, Loaded> cache;
  AblationTable table;
  for (const auto& rs : row_specs(spec)) {
    AblationRow row{rs.block, rs.variant, std::nullopt, {}, ""};
    for (auto seed : spec.seeds) {
      const auto path = rs.stage2_checkpoint ? stage2_checkpoint_path(checkpoint_dir, seed, rs.fusion, rs.loss)
                                             : stage1_checkpoint_path(checkpoint_dir, seed, rs.loss);
      auto it = cache.find(path);
      if (it == cache.end()) {
        if (!fs::exists(path)) {
          row.missing = path;
          break;
        }
        auto m = model::Model::from_checkpoint(ad::load_checkpoint(path));
        auto index = retrieval::build_index(corpus, split.test_videos, m);
        it = cache.emplace(path, Loaded{std::move(m), std::move(index)}).first;
      }
      row.per_seed.push_back(evaluate(test, it->second.model, it->second.index, rs.config));
    }
    if (row.missing.empty()) {
      row.result = average_results(row.per_seed);
    } else {
      row.per_seed.clear();
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

void train_ablation_checkpoints(const data::Corpus& corpus, const Split& split, const std::string& checkpoint_dir,
                                const std::vector<std::uint64_t>& seeds, const train::TrainConfig& stage1,
                                const train::TrainConfig& stage2, const model::ModelConfig& base,
                                const ProgressFn& progress) {
  const auto config = train::model_config_for(corpus, base);
  const auto items = train::make_items(corpus, split.train_videos);
  auto note = [&](const std::string& s) {
    if (progress) progress(s);
  };
  for (auto seed : seeds) {
    fs::create_directories(fs::path(checkpoint_dir) / ("seed" + std::to_string(seed)));
    for (auto loss : {ContrastiveMode::kBidirectional, ContrastiveMode::kTextToVideo}) {
      auto m = model::Model::initialize(config, seed);
      auto c1 = stage1;
      c1.seed = seed;
      c1.loss = loss;
      train::train_stage1(m, items, c1);
      ad::save_checkpoint(stage1_checkpoint_path(checkpoint_dir, seed, loss), m.to_checkpoint());
      note("seed " + std::to_string(seed) + ": stage1 " + train::to_string(loss));

      const auto index = retrieval::build_index(corpus, split.train_videos, m);
      std::vector<FusionMode> modes{FusionMode::kFull};
      if (loss == ContrastiveMode::kBidirectional) {
        modes.push_back(FusionMode::kAddOnly);
        modes.push_back(FusionMode::kMulOnly);
      }
      for (auto mode : modes) {
        auto m2 = m.clone();
        auto c2 = stage2;
        c2.seed = seed;
        c2.fusion = mode;
        train::train_stage2(m2, items, index, c2);
        ad::save_checkpoint(stage2_checkpoint_path(checkpoint_dir, seed, mode, loss), m2.to_checkpoint());
        note("seed " + std::to_string(seed) + ": stage2 " + model::to_string(mode) + " " + train::to_string(loss));
      }
    }
  }
}

}  // namespace datr::eval
