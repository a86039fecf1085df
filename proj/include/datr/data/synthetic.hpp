#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "datr/data/corpus.hpp"

namespace datr::data {

// Parameters of the synthetic multi-turn corpus.
//
// Every topic is a fixed combination of `atoms_per_topic` topic atoms and
// every (topic, detail) pair adds `atoms_per_detail` detail atoms. Each atom
// is bound to one vocabulary word and one random unit latent vector in
// R^d_in, so unseen topics are new combinations of known words. Frames are
//   x = normalize(Σ topic atoms) + normalize(Σ detail atoms) + N(0, σ²).
// q1 names only the topic atoms (ambiguous among that topic's details);
// q2 names topic and detail atoms. A source holds the videos of
// `details_per_source` consecutive details of one topic, so a grouped split
// keeps near-identical copies together while test topics also occur in
// training with other details.
struct SyntheticSpec {
  std::size_t n_topics = 20;
  std::size_t details_per_topic = 5;
  std::size_t videos_per_detail = 3;
  std::size_t details_per_source = 3;
  std::size_t d_in = 32;
  std::size_t n_frames = 32;
  double noise_sigma = 0.1;
  std::size_t topic_atoms = 12;
  std::size_t atoms_per_topic = 3;
  std::size_t detail_atoms = 10;
  std::size_t atoms_per_detail = 2;
  std::uint64_t seed = 0;

  // Throws ConfigError, e.g. for fewer than two details per topic.
  void validate() const;
  std::string to_json() const;
};

struct SyntheticVideo {
  std::size_t topic = 0;
  std::size_t detail = 0;  // index within the topic
  std::size_t copy = 0;
};

struct SyntheticCorpus {
  SyntheticSpec spec;
  std::vector<TripletRecord> triplets;
  std::vector<ManifestEntry> manifest;
  std::vector<FrameFeatures> features;
  std::vector<SyntheticVideo> videos;  // parallel to manifest

  // Ground-truth latent geometry, for oracle encoders in tests.
  std::vector<std::string> topic_words;
  std::vector<std::string> detail_words;
  std::vector<std::vector<double>> topic_latents;   // per topic atom, unit
  std::vector<std::vector<double>> detail_latents;  // per detail atom, unit
  std::vector<std::vector<std::size_t>> topic_combos;                // atoms per topic
  std::vector<std::vector<std::vector<std::size_t>>> detail_combos;  // [topic][detail] atoms

  // Unit latent of a text: normalized sum of the latents of its atom words.
  std::vector<double> latent_text(const std::string& text) const;
};

SyntheticCorpus generate_synthetic_corpus(const SyntheticSpec& spec);

// Writes triplets.jsonl, manifest.jsonl, features/*.mhvf and synthetic_spec.json.
void write_synthetic_corpus(const std::string& dir, const SyntheticCorpus& corpus);

}  // namespace datr::data
