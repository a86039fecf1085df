#include "datr/data/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <random>

#include "datr/error.hpp"
#include "datr/io/binary.hpp"
#include "datr/model/tokenizer.hpp"

namespace datr::data {

namespace {

const std::vector<std::string> kTopicWords = {
    "squat", "lunge",  "shoulder", "knee",  "stretch", "plank", "posture", "breathing",
    "balance", "hip",  "ankle",    "spine", "neck",    "wrist", "core",    "bridge"};

const std::vector<std::string> kDetailWords = {
    "beginner", "seated", "band",  "wall",   "chair",    "slow",     "standing", "advanced",
    "towel",    "mat",    "foam",  "supine", "prone",    "weighted", "assisted", "elderly"};

std::vector<std::string> atom_words(const std::vector<std::string>& base, std::size_t n,
                                    const std::string& fallback_prefix) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(i < base.size() ? base[i] : fallback_prefix + std::to_string(i));
  }
  return out;
}

double binomial(std::size_t n, std::size_t k) {
  double r = 1.0;
  for (std::size_t i = 1; i <= k; ++i) r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
  return r;
}

// All k-subsets of {0..n-1} in lexicographic order.
std::vector<std::vector<std::size_t>> combinations(std::size_t n, std::size_t k) {
  std::vector<std::vector<std::size_t>> out;
  std::vector<std::size_t> cur(k);
  for (std::size_t i = 0; i < k; ++i) cur[i] = i;
  while (true) {
    out.push_back(cur);
    std::size_t i = k;
    while (i > 0 && cur[i - 1] == n - k + i - 1) --i;
    if (i == 0) break;
    ++cur[i - 1];
    for (std::size_t j = i; j < k; ++j) cur[j] = cur[j - 1] + 1;
  }
  return out;
}

std::vector<double> unit_gaussian(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(dim);
  double ss = 0.0;
  for (auto& x : v) {
    x = normal(rng);
    ss += x * x;
  }
  for (auto& x : v) x /= std::sqrt(ss);
  return v;
}

std::vector<double> normalized_sum(const std::vector<std::vector<double>>& latents,
                                   const std::vector<std::size_t>& atoms, std::size_t dim) {
  std::vector<double> v(dim, 0.0);
  for (auto a : atoms) {
    for (std::size_t i = 0; i < dim; ++i) v[i] += latents[a][i];
  }
  double ss = 0.0;
  for (auto x : v) ss += x * x;
  for (auto& x : v) x /= std::sqrt(ss);
  return v;
}

std::string join_words(const std::vector<std::string>& words, const std::vector<std::size_t>& atoms) {
  std::string out;
  for (auto a : atoms) {
    if (!out.empty()) out += ' ';
    out += words[a];
  }
  return out;
}

std::string format_id(const char* pattern, std::size_t a, std::size_t b, std::size_t c) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), pattern, a, b, c);
  return buf;
}

}  // namespace

void SyntheticSpec::validate() const {
  if (n_topics < 2) throw ConfigError("synthetic corpus needs at least 2 topics");
  if (details_per_topic < 2) {
    throw ConfigError("synthetic corpus needs at least 2 details per topic, got " +
                      std::to_string(details_per_topic));
  }
  if (details_per_source < 1) throw ConfigError("details_per_source must be >= 1");
  if (videos_per_detail < 1 || d_in < 1 || n_frames < 1) {
    throw ConfigError("videos_per_detail, d_in and n_frames must be >= 1");
  }
  if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
  if (atoms_per_topic < 1 || atoms_per_topic > topic_atoms || atoms_per_detail < 1 ||
      atoms_per_detail > detail_atoms) {
    throw ConfigError("atom counts must satisfy 1 <= per-item <= pool size");
  }
  if (binomial(topic_atoms, atoms_per_topic) < static_cast<double>(n_topics)) {
    throw ConfigError("not enough topic atom combinations for " + std::to_string(n_topics) + " topics");
  }
  if (binomial(detail_atoms, atoms_per_detail) < static_cast<double>(details_per_topic)) {
    throw ConfigError("not enough detail atom combinations for " +
                      std::to_string(details_per_topic) + " details per topic");
  }
}

std::string SyntheticSpec::to_json() const {
  nlohmann::ordered_json j;
  j["n_topics"] = n_topics;
  j["details_per_topic"] = details_per_topic;
  j["videos_per_detail"] = videos_per_detail;
  j["details_per_source"] = details_per_source;
  j["d_in"] = d_in;
  j["n_frames"] = n_frames;
  j["noise_sigma"] = noise_sigma;
  j["topic_atoms"] = topic_atoms;
  j["atoms_per_topic"] = atoms_per_topic;
  j["detail_atoms"] = detail_atoms;
  j["atoms_per_detail"] = atoms_per_detail;
  j["seed"] = seed;
  return j.dump(2) + "\n";
}

std::vector<double> SyntheticCorpus::latent_text(const std::string& text) const {
  std::map<std::string, const std::vector<double>*> latent_of;
  for (std::size_t i = 0; i < topic_words.size(); ++i) latent_of[topic_words[i]] = &topic_latents[i];
  for (std::size_t i = 0; i < detail_words.size(); ++i) latent_of[detail_words[i]] = &detail_latents[i];
  std::vector<double> v(spec.d_in, 0.0);
  for (const auto& w : model::normalize_words(text)) {
    auto it = latent_of.find(w);
    if (it == latent_of.end()) continue;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += (*it->second)[i];
  }
  double ss = 0.0;
  for (auto x : v) ss += x * x;
  if (ss > 0.0) {
    for (auto& x : v) x /= std::sqrt(ss);
  }
  return v;
}

SyntheticCorpus generate_synthetic_corpus(const SyntheticSpec& spec) {
  spec.validate();
  SyntheticCorpus c;
  c.spec = spec;
  std::mt19937_64 rng(spec.seed);

  c.topic_words = atom_words(kTopicWords, spec.topic_atoms, "topic");
  c.detail_words = atom_words(kDetailWords, spec.detail_atoms, "detail");
  for (std::size_t i = 0; i < spec.topic_atoms; ++i) c.topic_latents.push_back(unit_gaussian(rng, spec.d_in));
  for (std::size_t i = 0; i < spec.detail_atoms; ++i) c.detail_latents.push_back(unit_gaussian(rng, spec.d_in));

  auto topic_pool = combinations(spec.topic_atoms, spec.atoms_per_topic);
  std::shuffle(topic_pool.begin(), topic_pool.end(), rng);
  topic_pool.resize(spec.n_topics);
  c.topic_combos = topic_pool;

  const auto detail_pool = combinations(spec.detail_atoms, spec.atoms_per_detail);
  for (std::size_t t = 0; t < spec.n_topics; ++t) {
    auto pool = detail_pool;
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(spec.details_per_topic);
    c.detail_combos.push_back(std::move(pool));
  }

  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t t = 0; t < spec.n_topics; ++t) {
    const auto topic_latent = normalized_sum(c.topic_latents, c.topic_combos[t], spec.d_in);
    const auto topic_text = join_words(c.topic_words, c.topic_combos[t]);
    for (std::size_t k = 0; k < spec.details_per_topic; ++k) {
      const auto source = format_id("src-t%02zu-b%02zu", t, k / spec.details_per_source, 0);
      const auto detail_latent = normalized_sum(c.detail_latents, c.detail_combos[t][k], spec.d_in);
      const auto detail_text = join_words(c.detail_words, c.detail_combos[t][k]);
      for (std::size_t m = 0; m < spec.videos_per_detail; ++m) {
        const auto video_id = format_id("vid-t%02zu-d%02zu-m%02zu", t, k, m);
        FrameFeatures f;
        f.video_id = video_id;
        f.n_frames = spec.n_frames;
        f.dim = spec.d_in;
        f.values.resize(spec.n_frames * spec.d_in);
        for (std::size_t j = 0; j < spec.n_frames; ++j) {
          for (std::size_t i = 0; i < spec.d_in; ++i) {
            const double base = topic_latent[i] + detail_latent[i];
            f.values[j * spec.d_in + i] = static_cast<float>(base + spec.noise_sigma * noise(rng));
          }
        }
        c.features.push_back(std::move(f));
        c.manifest.push_back({video_id, "features/" + video_id + ".mhvf", source});
        c.videos.push_back({t, k, m});

        TripletRecord r;
        r.id = format_id("trip-t%02zu-d%02zu-m%02zu", t, k, m);
        r.video_id = video_id;
        r.q1 = "how to " + topic_text;
        r.d_v = "A demonstration of " + topic_text + " performed " + detail_text + ".";
        r.q2 = "show " + topic_text + " with " + detail_text;
        r.source_id = source;
        c.triplets.push_back(std::move(r));
      }
    }
  }
  return c;
}

void write_synthetic_corpus(const std::string& dir, const SyntheticCorpus& corpus) {
  write_corpus_files(dir, corpus.triplets, corpus.manifest, corpus.features);
  io::write_file((std::filesystem::path(dir) / "synthetic_spec.json").string(), corpus.spec.to_json());
}

}  // namespace datr::data
