#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "datr/autodiff/tensor.hpp"

namespace datr::data {

// One (q1, d_v, q2) item grounded in a video.
struct TripletRecord {
  std::string id;
  std::string video_id;
  std::string q1;   // initial coarse query
  std::string d_v;  // video-grounded description; carried for traceability, unused by the model
  std::string q2;   // refined follow-up query
  std::string source_id;

  bool operator==(const TripletRecord&) const = default;
};

// n_frames × dim frame-feature matrix, row-major f32.
struct FrameFeatures {
  std::string video_id;
  std::size_t n_frames = 0;
  std::size_t dim = 0;
  std::vector<float> values;

  ad::Tensor to_tensor() const;
  bool operator==(const FrameFeatures&) const = default;
};

struct ManifestEntry {
  std::string video_id;
  std::string feature_path;  // relative to the corpus directory
  std::string source_id;
};

// --- triplets.jsonl -------------------------------------------------------

// Required string fields: id, video_id, q1, q2 (q1/q2 non-empty). d_v and
// source_id are optional and default to "". Duplicate ids are rejected.
// Errors name the 1-based line number.
std::vector<TripletRecord> parse_triplets(std::string_view jsonl, const std::string& source);
// When known_videos is given, every video_id must be in it.
std::vector<TripletRecord> load_triplets(const std::string& path,
                                         const std::set<std::string>* known_videos = nullptr);
std::string triplets_to_jsonl(const std::vector<TripletRecord>& triplets);

// --- manifest.jsonl -------------------------------------------------------

std::vector<ManifestEntry> parse_manifest(std::string_view jsonl, const std::string& source);
std::string manifest_to_jsonl(const std::vector<ManifestEntry>& entries);

// --- *.mhvf ----------------------------------------------------------------
//
//   "MHVF"   4-byte magic
//   u16      version (1)
//   u32      dim
//   u32      n_frames
//   f32      n_frames × dim values, row-major, little-endian

inline constexpr std::uint16_t kFeatureVersion = 1;

std::string encode_frame_features(const FrameFeatures& features);
FrameFeatures decode_frame_features(std::string_view bytes, const std::string& source,
                                    std::string video_id = {});
void write_frame_features(const std::string& path, const FrameFeatures& features);
FrameFeatures read_frame_features(const std::string& path, std::string video_id = {});

// --- corpus directory -------------------------------------------------------
//
//   <dir>/triplets.jsonl
//   <dir>/manifest.jsonl
//   <dir>/features/<video_id>.mhvf

struct Corpus {
  std::string dir;
  std::vector<TripletRecord> triplets;
  std::vector<ManifestEntry> manifest;
  std::map<std::string, FrameFeatures> features;
  // Manifest entries whose feature file could not be read, with the reason.
  std::map<std::string, std::string> feature_errors;

  // Reads triplets and manifest, and every readable feature file. Triplets
  // with an empty source_id inherit the manifest's.
  static Corpus load(const std::string& dir);

  const ManifestEntry* video(const std::string& video_id) const;
  const FrameFeatures* frames(const std::string& video_id) const;
  // Manifest video ids in manifest order.
  std::vector<std::string> video_ids() const;
  // Every q1/q2 text, for vocabulary construction.
  std::vector<std::string> query_texts() const;
};

void write_corpus_files(const std::string& dir, const std::vector<TripletRecord>& triplets,
                        const std::vector<ManifestEntry>& manifest,
                        const std::vector<FrameFeatures>& features);

struct Violation {
  std::string kind;  // "format", "dangling_reference", "shape", "schema", "split"
  std::string path;
  std::string message;
};

struct ValidationReport {
  std::size_t videos = 0;
  std::size_t triplets = 0;
  std::size_t sources = 0;
  std::optional<std::size_t> n_frames;
  std::optional<std::size_t> dim;
  std::vector<Violation> violations;

  bool ok() const { return violations.empty(); }
};

// Never throws on bad content; every problem becomes a violation.
ValidationReport validate_corpus(const std::string& dir);

}  // namespace datr::data
