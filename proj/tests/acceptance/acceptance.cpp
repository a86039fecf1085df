// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// nonzero when any fails. Pass criterion names (or substrings) to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "datr/autodiff/checkpoint.hpp"
#include "datr/autodiff/ops.hpp"
#include "datr/data/synthetic.hpp"
#include "datr/error.hpp"
#include "datr/evaluation/ablation.hpp"
#include "datr/evaluation/metrics.hpp"
#include "datr/io/binary.hpp"
#include "datr/retrieval/pipeline.hpp"
#include "datr/service/service.hpp"
#include "datr/training/trainer.hpp"
#include "support/gradcheck.hpp"
#include "support/service_fixture.hpp"
#include "support/temp_dir.hpp"

using namespace datr;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double x, int precision = 3) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << x;
  return s.str();
}

std::string sci(double x) {
  std::ostringstream s;
  s << std::scientific << std::setprecision(2) << x;
  return s.str();
}

// ---------------------------------------------------------------- gradients

// Central differences on a fixed random sample of every parameter tensor.
testing::GradCheck sampled_gradcheck(const std::function<ad::Tensor()>& loss, const std::vector<ad::NamedTensor>& params,
                                     std::size_t per_tensor, std::mt19937_64& rng, double step = 1e-5,
                                     double floor = 1e-6) {
  for (const auto& p : params) p.tensor.node()->grad.clear();
  {
    ad::Tape tape;
    tape.backward(loss());
  }
  testing::GradCheck out;
  for (const auto& p : params) {
    auto t = p.tensor;
    auto values = t.mutable_data();
    std::vector<std::size_t> idx(values.size());
    std::iota(idx.begin(), idx.end(), 0);
    if (idx.size() > per_tensor) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(per_tensor);
    }
    for (auto i : idx) {
      const double analytic = t.has_grad() ? t.grad()[i] : 0.0;
      const double x = values[i];
      values[i] = x + step;
      const double up = loss().item();
      values[i] = x - step;
      const double down = loss().item();
      values[i] = x;
      const double numeric = (up - down) / (2.0 * step);
      const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
      ++out.checked;
      if (rel > out.max_rel_error) {
        out.max_rel_error = rel;
        out.worst = p.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return out;
}

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  const std::vector<std::string> q1{"how to squat", "neck stretch", "how to plank", "shoulder mobility drill"};
  const std::vector<std::string> q2{"squat with a slow tempo", "gentle neck roll seated", "plank on knees",
                                    "shoulder drill with a band"};
  std::vector<std::string> words = q1;
  words.insert(words.end(), q2.begin(), q2.end());
  model::ModelConfig c;  // full default architecture
  c.vocab = model::Vocabulary::collect(words);
  auto m = model::Model::initialize(c, 11);

  std::mt19937_64 rng(5);
  std::vector<ad::Tensor> frames;
  for (int i = 0; i < 4; ++i) frames.push_back(testing::random_tensor(rng, {c.n_frames, c.d_in}, false));
  auto videos = [&] {
    std::vector<ad::Tensor> zv;
    for (const auto& f : frames) zv.push_back(model::encode_video(m, f));
    return ad::concat_rows(zv);
  };
  auto stage1 = [&](train::ContrastiveMode mode) {
    return [&, mode] {
      return train::clip_loss(model::encode_texts(m, q1), videos(), train::temperature(m.temperature.log_tau), mode);
    };
  };
  // Each query against the other three videos.
  const std::vector<std::size_t> owner{0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3};
  const std::vector<std::size_t> neg_rows{1, 2, 3, 0, 2, 3, 0, 1, 3, 0, 1, 2};
  auto stage2 = [&](model::FusionMode mode) {
    return [&, mode] {
      const auto z_v = videos();
      const auto z_f = model::fuse(m, model::encode_texts(m, q1), model::encode_texts(m, q2), mode);
      const auto s_pos = model::rerank_scores(m, z_f, z_v);
      const auto s_neg = model::rerank_scores(m, ad::gather_rows(z_f, owner), ad::gather_rows(z_v, neg_rows));
      return train::margin_ranking_loss(s_pos, s_neg, owner, 0.2);
    };
  };

  struct Case {
    std::string name;
    std::function<ad::Tensor()> loss;
  };
  const std::vector<Case> cases{
      {"stage1-bidirectional", stage1(train::ContrastiveMode::kBidirectional)},
      {"stage1-t2v", stage1(train::ContrastiveMode::kTextToVideo)},
      {"stage2-full", stage2(model::FusionMode::kFull)},
      {"stage2-add", stage2(model::FusionMode::kAddOnly)},
      {"stage2-mul", stage2(model::FusionMode::kMulOnly)},
  };
  const auto params = m.named_parameters();
  double worst = 0.0;
  std::string where;
  std::size_t checked = 0;
  for (const auto& cs : cases) {
    const auto r = sampled_gradcheck(cs.loss, params, 6, rng);
    checked += r.checked;
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      where = cs.name + " " + r.worst;
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 120.0,
          std::to_string(params.size()) + " parameter groups, " + std::to_string(checked) +
              " elements, max rel error " + sci(worst) + " at " + where + " (limit 1e-4), " + fmt(secs, 1) +
              " s (limit 120 s)"};
}

// ---------------------------------------------------------------- retrieval

std::vector<std::string> brute_force(std::span<const double> q, const retrieval::EmbeddingIndex& index) {
  std::vector<std::pair<double, std::string>> all;
  for (std::size_t i = 0; i < index.size(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < index.dim(); ++j) s += index.row(i)[j] * q[j];
    all.emplace_back(s, index.ids()[i]);
  }
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::vector<std::string> out;
  for (const auto& [_, id] : all) out.push_back(id);
  return out;
}

retrieval::EmbeddingIndex random_index(std::mt19937_64& rng, std::size_t n, std::size_t d, bool coarse) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_int_distribution<int> small(-1, 1);
  std::vector<std::string> ids;
  std::vector<double> m;
  m.reserve(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "v%07zu", (i * 7919) % 1000003);
    ids.push_back(buf);
    std::vector<double> row(d);
    double ss = 0.0;
    do {
      ss = 0.0;
      for (auto& x : row) ss += (x = coarse ? small(rng) : g(rng)) * x;
    } while (ss == 0.0);
    for (auto& x : row) m.push_back(x / std::sqrt(ss));
  }
  return retrieval::EmbeddingIndex(std::move(ids), std::move(m), d, {});
}

std::vector<double> random_unit(std::mt19937_64& rng, std::size_t d) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> q(d);
  double ss = 0.0;
  for (auto& x : q) ss += (x = g(rng)) * x;
  for (auto& x : q) x /= std::sqrt(ss);
  return q;
}

Outcome retrieval_exactness() {
  std::mt19937_64 rng(2024);
  std::size_t mismatches = 0, max_n = 0, max_d = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = std::uniform_int_distribution<std::size_t>(1, 2000)(rng);
    const auto d = std::uniform_int_distribution<std::size_t>(1, 64)(rng);
    max_n = std::max(max_n, n);
    max_d = std::max(max_d, d);
    // Every fourth corpus draws rows from {-1,0,1}^d so exact ties are common.
    const auto index = random_index(rng, n, d, trial % 4 == 3);
    const auto row = index.row(rng() % n);
    const auto q = trial % 2 ? random_unit(rng, d) : std::vector<double>(row.begin(), row.end());
    const auto k = std::uniform_int_distribution<std::size_t>(1, n + 10)(rng);
    auto expected = brute_force(q, index);
    expected.resize(std::min(k, n));
    if (retrieval::stage1_retrieve(q, index, k).ids() != expected) ++mismatches;
  }
  return {mismatches == 0, "200 corpora (N <= " + std::to_string(max_n) + ", d <= " + std::to_string(max_d) +
                               "), " + std::to_string(mismatches) + " mismatches"};
}

// ---------------------------------------------------------------- metrics

Outcome metric_oracle() {
  std::mt19937_64 rng(77);
  std::size_t failures = 0, even = 0;
  double worst_mean = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto n = std::uniform_int_distribution<std::size_t>(1, 300)(rng);
    const auto hi = std::uniform_int_distribution<std::size_t>(1, 1000)(rng);
    std::vector<std::size_t> ranks(n);
    for (auto& r : ranks) r = std::uniform_int_distribution<std::size_t>(1, hi)(rng);
    const auto got = eval::compute_metrics(ranks);

    bool ok = got.n_queries == n;
    for (auto k : eval::kRecallCutoffs) {
      std::size_t hits = 0;
      for (auto r : ranks) hits += r <= k;
      ok = ok && got.recall_at.count(k) && got.recall_at.at(k) == static_cast<double>(hits) / static_cast<double>(n);
    }
    auto sorted = ranks;
    std::sort(sorted.begin(), sorted.end());
    const double med = n % 2 ? static_cast<double>(sorted[n / 2])
                             : (static_cast<double>(sorted[n / 2 - 1]) + static_cast<double>(sorted[n / 2])) / 2.0;
    even += n % 2 == 0;
    ok = ok && got.med_rank == med;
    long double sum = 0;
    for (auto r : ranks) sum += r;
    const double mean = static_cast<double>(sum / n);
    worst_mean = std::max(worst_mean, std::abs(got.mean_rank - mean));
    ok = ok && std::abs(got.mean_rank - mean) <= 1e-12;
    failures += !ok;
  }
  return {failures == 0, "1000 lists (" + std::to_string(even) + " even-length), " + std::to_string(failures) +
                             " disagreements, max MeanR deviation " + sci(worst_mean) + " (limit 1e-12)"};
}

// ---------------------------------------------------------------- ablation

struct AblationRun {
  eval::AblationTable table;
  double seconds = 0.0;
  std::string error;
};

double recall_points(const eval::AblationTable& t, const std::string& block, const std::string& variant,
                     std::size_t k) {
  const auto* row = t.find(block, variant);
  if (!row || !row->result) throw Error("ablation row missing: " + block + " / " + variant);
  return 100.0 * row->result->recall_at.at(k);
}

const AblationRun& ablation() {
  static const AblationRun run = [] {
    AblationRun out;
    const auto t0 = Clock::now();
    try {
      testing::TempDir dir;
      data::SyntheticSpec spec;  // 20 topics, 5 details, 3 videos per detail
      spec.seed = 0;
      data::write_synthetic_corpus(dir / "corpus", data::generate_synthetic_corpus(spec));
      const auto corpus = data::Corpus::load(dir / "corpus");
      const auto split = eval::grouped_split(corpus.manifest, 0);
      train::TrainConfig s1, s2;
      s1.epochs = 10;
      s2.epochs = 100;
      eval::AblationSpec as;
      as.seeds = {0, 1, 2, 3, 4};
      as.k = 100;
      as.scope_k = 20;
      eval::train_ablation_checkpoints(corpus, split, dir / "ckpt", as.seeds, s1, s2, {},
                                       [](const std::string& line) { std::cerr << "  " << line << "\n"; });
      out.table = eval::ablation_suite(corpus, split, dir / "ckpt", as);
      std::cerr << out.table.to_text();
    } catch (const std::exception& e) {
      out.error = e.what();
    }
    out.seconds = seconds_since(t0);
    return out;
  }();
  return run;
}

Outcome stage2_direction() {
  const auto& a = ablation();
  if (!a.error.empty()) return {false, a.error};
  const double without = recall_points(a.table, "Stage II", "without", 1);
  const double with = recall_points(a.table, "Stage II", "with", 1);
  const bool pass = with > without && with - without >= 5.0 && a.seconds < 900.0;
  return {pass, "R@1 stage I " + fmt(without, 2) + " vs full " + fmt(with, 2) + " (margin " + fmt(with - without, 2) +
                    " points, target >= 5), train + evaluate " + fmt(a.seconds, 0) + " s (limit 900 s)"};
}

Outcome fusion_direction() {
  const auto& a = ablation();
  if (!a.error.empty()) return {false, a.error};
  const double add = recall_points(a.table, "Fusion", "add only", 1);
  const double mul = recall_points(a.table, "Fusion", "mul only", 1);
  const double full = recall_points(a.table, "Fusion", "add + mul + MLP", 1);
  return {full >= add && full >= mul,
          "R@1 full " + fmt(full, 2) + ", add-only " + fmt(add, 2) + ", mul-only " + fmt(mul, 2)};
}

Outcome bidirectional_direction() {
  const auto& a = ablation();
  if (!a.error.empty()) return {false, a.error};
  const double t2v = recall_points(a.table, "CLIP loss", "text-to-video only", 1);
  const double bi = recall_points(a.table, "CLIP loss", "bidirectional", 1);
  return {bi >= t2v, "R@1 bidirectional " + fmt(bi, 2) + ", text-to-video only " + fmt(t2v, 2)};
}

// Wall time of the fastest of `reps` calls.
double best_of(int reps, const std::function<void()>& f) {
  double best = 1e300;
  for (int i = 0; i < reps; ++i) {
    const auto t0 = Clock::now();
    f();
    best = std::min(best, seconds_since(t0));
  }
  return best;
}

Outcome rerank_scope() {
  const auto& a = ablation();
  if (!a.error.empty()) return {false, a.error};
  const double full = recall_points(a.table, "Re-rank scope", "full corpus", 10);
  const double top = recall_points(a.table, "Re-rank scope", "top-20", 10);

  // Scoring cost at N=1000, K=100 with the full-size model.
  std::mt19937_64 rng(31);
  model::ModelConfig c;
  c.vocab = model::Vocabulary::collect({"how to squat", "squat with a slow tempo"});
  const auto m = model::Model::initialize(c, 0);
  const auto index = random_index(rng, 1000, c.d, false);
  const auto z1 = model::encode_text(m, "how to squat");
  const auto z2 = model::encode_text(m, "squat with a slow tempo");
  const auto all = retrieval::stage1_retrieve(z1.data(), index, 1000);
  const auto head = retrieval::stage1_retrieve(z1.data(), index, 100);
  const auto fusion = model::FusionMode::kFull;
  const double t_all = best_of(15, [&] { retrieval::stage2_rerank(z1.data(), z2.data(), all, m, index, 10, fusion); });
  const double t_head = best_of(15, [&] { retrieval::stage2_rerank(z1.data(), z2.data(), head, m, index, 10, fusion); });
  const double ratio = t_head / t_all;
  // Both sides are means of hit fractions, so an exact 2-point gap can come out a few ulps above 2.
  const double delta = std::abs(full - top);
  return {delta <= 2.0 + 1e-9 && ratio <= 0.5,
          "R@10 full re-rank " + fmt(full, 2) + " vs top-20 " + fmt(top, 2) + " (|delta| " + fmt(delta, 6) +
              ", limit 2); cost top-100/full at N=1000 " + fmt(ratio, 3) + " (" + fmt(t_head * 1e3, 2) + " ms / " +
              fmt(t_all * 1e3, 2) + " ms, limit 0.5)"};
}

// ---------------------------------------------------------------- determinism

#ifdef DATR_CLI
bool same_bytes(const std::string& a, const std::string& b) {
  return fs::exists(a) && fs::exists(b) && io::read_file(a) == io::read_file(b);
}

Outcome determinism() {
  testing::TempDir dir;
  auto run = [&](const std::string& args, const std::string& stdout_file) {
    const std::string cmd = std::string("\"") + DATR_CLI + "\" " + args + " > \"" + (dir / stdout_file) + "\" 2> \"" +
                            (dir / (stdout_file + ".err")) + "\"";
    if (std::system(cmd.c_str()) != 0) throw Error("command failed: " + cmd);
  };
  std::vector<std::string> differing;
  try {
    for (const std::string i : {"1", "2"}) {
      const auto c = dir / ("corpus" + i);
      run("gen-corpus --out \"" + c + "\" --seed 0", "gen" + i + ".out");
      const auto s = dir / ("split" + i + ".json");
      run("split --corpus \"" + c + "\" --out \"" + s + "\" --seed 0", "split" + i + ".out");
      const std::string common = " --corpus \"" + c + "\" --split \"" + s + "\" --seed 0 --d 32 --heads 4 --layers 3";
      const auto s1 = dir / ("s1-" + i + ".ckpt"), s2 = dir / ("s2-" + i + ".ckpt");
      run("train-stage1" + common + " --epochs 2 --out \"" + s1 + "\" --report \"" + (dir / ("r1-" + i + ".json")) + "\"",
          "t1-" + i + ".out");
      run("train-stage2 --corpus \"" + c + "\" --split \"" + s + "\" --seed 0 --epochs 3 --init \"" + s1 + "\" --out \"" +
              s2 + "\"",
          "t2-" + i + ".out");
      const auto idx = dir / ("index" + i + ".datri");
      run("build-index --corpus \"" + c + "\" --split \"" + s + "\" --checkpoint \"" + s2 + "\" --out \"" + idx + "\"",
          "bi" + i + ".out");
      run("evaluate --corpus \"" + c + "\" --split \"" + s + "\" --checkpoint \"" + s2 + "\" --index \"" + idx +
              "\" --json",
          "eval" + i + ".out");
    }
    for (const auto& e : fs::recursive_directory_iterator(dir / "corpus1")) {
      if (!e.is_regular_file()) continue;
      const auto rel = fs::relative(e.path(), dir / "corpus1").string();
      if (!same_bytes(e.path().string(), (fs::path(dir / "corpus2") / rel).string())) differing.push_back("corpus/" + rel);
    }
    for (const std::string f : {"split?.json", "s1-?.ckpt", "r1-?.json", "s2-?.ckpt", "index?.datri", "eval?.out"}) {
      std::string a = f, b = f;
      a[a.find('?')] = '1';
      b[b.find('?')] = '2';
      if (!same_bytes(dir / a, dir / b)) differing.push_back(a);
    }
  } catch (const std::exception& e) {
    return {false, e.what()};
  }
  std::string detail = "gen-corpus, split, train-stage1, train-stage2, build-index, evaluate run twice: ";
  if (differing.empty()) return {true, detail + "all outputs byte-identical"};
  detail += "differ:";
  for (const auto& d : differing) detail += " " + d;
  return {false, detail};
}
#endif

// ---------------------------------------------------------------- formats

// Decoding must fail with a FormatError positioned at `offset`.
template <typename Decode>
bool rejects_at(Decode&& decode, std::string bytes, std::size_t offset, std::vector<std::string>& notes,
                const std::string& what) {
  try {
    decode(bytes);
  } catch (const FormatError& e) {
    if (e.offset() == offset && std::string(e.what()).find("at byte " + std::to_string(offset)) != std::string::npos) {
      return true;
    }
    notes.push_back(what + ": offset " + std::to_string(e.offset()) + ", expected " + std::to_string(offset));
    return false;
  } catch (const std::exception& e) {
    notes.push_back(what + ": " + e.what());
    return false;
  }
  notes.push_back(what + ": accepted");
  return false;
}

std::string flip(std::string s, std::size_t at) {
  s[at] = static_cast<char>(s[at] ^ 0x5A);
  return s;
}

Outcome formats() {
  testing::TempDir dir;
  std::vector<std::string> notes;
  bool ok = true;
  std::mt19937_64 rng(4);

  // Checkpoint
  model::ModelConfig c;
  c.vocab = model::Vocabulary::collect({"how to squat", "neck roll"});
  const auto ckpt = model::Model::initialize(c, 3).to_checkpoint();
  const auto ck_bytes = ad::encode_checkpoint(ckpt);
  ad::save_checkpoint(dir / "m.ckpt", ckpt);
  const auto ck_back = ad::load_checkpoint(dir / "m.ckpt");
  bool ck_same = ck_back.config_text == ckpt.config_text && ck_back.tensors.size() == ckpt.tensors.size();
  for (std::size_t i = 0; ck_same && i < ckpt.tensors.size(); ++i) {
    const auto a = ckpt.tensors[i].tensor.data(), b = ck_back.tensors[i].tensor.data();
    ck_same = ckpt.tensors[i].name == ck_back.tensors[i].name && a.size() == b.size() &&
              std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
  }
  ck_same = ck_same && io::read_file(dir / "m.ckpt") == ck_bytes && ad::encode_checkpoint(ck_back) == ck_bytes;
  if (!ck_same) notes.push_back("checkpoint round trip differs");
  ok = ok && ck_same;
  auto ck_decode = [](const std::string& b) { ad::decode_checkpoint(b); };
  ok = rejects_at(ck_decode, flip(ck_bytes, 0), 0, notes, "checkpoint magic") && ok;
  ok = rejects_at(ck_decode, flip(ck_bytes, 6), 6, notes, "checkpoint version") && ok;
  ok = rejects_at(ck_decode, ck_bytes.substr(0, 7), 6, notes, "checkpoint truncated version") && ok;

  // Index
  const auto index = random_index(rng, 50, 16, false);
  const auto ix_bytes = retrieval::encode_index(index);
  retrieval::save_index(dir / "i.datri", index);
  const auto ix_back = retrieval::load_index(dir / "i.datri");
  const bool ix_same = ix_back.ids() == index.ids() && ix_back.matrix().size() == index.matrix().size() &&
                       std::memcmp(ix_back.matrix().data(), index.matrix().data(),
                                   index.matrix().size() * sizeof(double)) == 0 &&
                       io::read_file(dir / "i.datri") == ix_bytes && retrieval::encode_index(ix_back) == ix_bytes;
  if (!ix_same) notes.push_back("index round trip differs");
  ok = ok && ix_same;
  auto ix_decode = [](const std::string& b) { retrieval::decode_index(b); };
  ok = rejects_at(ix_decode, flip(ix_bytes, 3), 0, notes, "index magic") && ok;
  ok = rejects_at(ix_decode, flip(ix_bytes, 6), 6, notes, "index version") && ok;
  ok = rejects_at(ix_decode, ix_bytes.substr(0, 7), 6, notes, "index truncated version") && ok;

  // Frame features, including non-finite-looking bit patterns kept verbatim.
  data::FrameFeatures f{"v1", 7, 5, {}};
  std::normal_distribution<float> g(0.0f, 1.0f);
  for (std::size_t i = 0; i < 35; ++i) f.values.push_back(g(rng));
  f.values[3] = -0.0f;
  f.values[4] = std::numeric_limits<float>::denorm_min();
  const auto ft_bytes = data::encode_frame_features(f);
  data::write_frame_features(dir / "v1.mhvf", f);
  const auto ft_back = data::read_frame_features(dir / "v1.mhvf", "v1");
  const bool ft_same = ft_back.n_frames == f.n_frames && ft_back.dim == f.dim &&
                       std::memcmp(ft_back.values.data(), f.values.data(), f.values.size() * sizeof(float)) == 0 &&
                       io::read_file(dir / "v1.mhvf") == ft_bytes && data::encode_frame_features(ft_back) == ft_bytes;
  if (!ft_same) notes.push_back("feature round trip differs");
  ok = ok && ft_same;
  auto ft_decode = [](const std::string& b) { data::decode_frame_features(b, "<memory>"); };
  ok = rejects_at(ft_decode, flip(ft_bytes, 1), 0, notes, "feature magic") && ok;
  ok = rejects_at(ft_decode, flip(ft_bytes, 4), 4, notes, "feature version") && ok;
  ok = rejects_at(ft_decode, ft_bytes.substr(0, 5), 4, notes, "feature truncated version") && ok;

  std::string detail = "checkpoint, index and feature files round-trip bit-exactly; corrupted magic, version and "
                       "truncated headers rejected at their byte offsets";
  if (!ok) {
    detail = "problems:";
    for (const auto& n : notes) detail += " [" + n + "]";
  }
  return {ok, detail};
}

// ---------------------------------------------------------------- service

Outcome service_contract() {
  const testing::ServiceFixture f;
  service::Service replay_service(testing::ServiceFixture::config());
  replay_service.load(f.snapshot);
  const auto golden = testing::transcript_from_json(io::read_file(std::string(DATR_TEST_DATA_DIR) + "/golden_transcript.json"));
  std::vector<service::Request> script;
  std::size_t turns = 0;
  for (const auto& e : golden) {
    script.push_back(e.request);
    turns += e.request.path.ends_with("/turns") && e.response.status == 200;
  }
  const auto replay =
      testing::run_script(script, [&](const service::Request& r) { return replay_service.handle(r); });
  const auto at = testing::first_mismatch(golden, replay);

  service::Service s(testing::ServiceFixture::config());
  s.load(f.snapshot);
  const auto& t = f.corpus.triplets;
  constexpr std::size_t kSessions = 32;
  auto session = [&](std::size_t i) {
    const auto created = s.handle({"POST", "/v1/sessions", ""});
    const std::string id = nlohmann::json::parse(created.body).at("session_id");
    std::vector<std::string> bodies;
    for (const auto& q : {t[i % t.size()].q1, t[i % t.size()].q2, t[(i + 3) % t.size()].q2}) {
      nlohmann::json body{{"query", q}};
      bodies.push_back(s.handle({"POST", "/v1/sessions/" + id + "/turns", body.dump()}).body);
    }
    return bodies;
  };
  std::vector<std::vector<std::string>> serial, parallel(kSessions);
  for (std::size_t i = 0; i < kSessions; ++i) serial.push_back(session(i));
  std::vector<std::thread> threads;
  for (std::size_t i = 0; i < kSessions; ++i) threads.emplace_back([&, i] { parallel[i] = session(i); });
  for (auto& th : threads) th.join();
  std::size_t differing = 0;
  for (std::size_t i = 0; i < kSessions; ++i) differing += parallel[i] != serial[i];

  return {at == -1 && turns >= 3 && differing == 0,
          "golden transcript (" + std::to_string(golden.size()) + " exchanges, " + std::to_string(turns) + " turns) " +
              (at == -1 ? "replayed exactly" : "first differs at exchange " + std::to_string(at)) + "; " +
              std::to_string(kSessions) + " parallel sessions, " + std::to_string(differing) + " differ from serial"};
}

// ---------------------------------------------------------------- throughput

Outcome throughput() {
  std::mt19937_64 rng(100000);
  const auto index = random_index(rng, 100000, 64, false);
  std::vector<double> times;
  for (int i = 0; i < 60; ++i) {
    const auto q = random_unit(rng, 64);
    const auto t0 = Clock::now();
    const auto r = retrieval::stage1_retrieve(q, index, 100);
    times.push_back(seconds_since(t0) * 1e3);
    if (r.entries.size() != 100) return {false, "wrong result size"};
  }
  std::sort(times.begin(), times.end());
  const double mean = std::accumulate(times.begin(), times.end(), 0.0) / static_cast<double>(times.size());
  const double worst = times.back();
  return {worst < 50.0, "N=100000, d=64, K=100, 60 queries on one thread: mean " + fmt(mean, 2) + " ms, median " +
                            fmt(times[times.size() / 2], 2) + " ms, max " + fmt(worst, 2) + " ms (limit 50 ms)"};
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    std::string name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {"gradient-suite", gradient_suite},
      {"retrieval-exactness", retrieval_exactness},
      {"metric-oracle", metric_oracle},
      {"stage2-direction", stage2_direction},
      {"fusion-direction", fusion_direction},
      {"rerank-scope", rerank_scope},
      {"bidirectional-direction", bidirectional_direction},
#ifdef DATR_CLI
      {"determinism", determinism},
#else
      {"determinism", [] { return Outcome{false, "datr CLI not built"}; }},
#endif
      {"formats", formats},
      {"service-contract", service_contract},
      {"throughput", throughput},
  };
  std::vector<std::string> filters(argv + 1, argv + argc);
  int failed = 0;
  for (const auto& c : criteria) {
    if (!filters.empty() &&
        std::none_of(filters.begin(), filters.end(), [&](const auto& f) { return c.name.find(f) != std::string::npos; })) {
      continue;
    }
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << c.name << ": " << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
