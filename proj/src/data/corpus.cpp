#include "datr/data/corpus.hpp"

#include <cmath>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <sstream>

#include "datr/error.hpp"
#include "datr/io/binary.hpp"

namespace datr::data {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr std::string_view kFeatureMagic{"MHVF", 4};

// Splits on LF, dropping a trailing CR. Returns (1-based line number, text) for non-blank lines.
std::vector<std::pair<std::size_t, std::string>> jsonl_lines(std::string_view text) {
  std::vector<std::pair<std::size_t, std::string>> out;
  std::size_t line_no = 0, start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    std::string line(text.substr(start, end - start));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") != std::string::npos) out.emplace_back(line_no, std::move(line));
    if (end == text.size()) break;
    start = end + 1;
  }
  return out;
}

std::string where(const std::string& source, std::size_t line) {
  return source + ":" + std::to_string(line);
}

std::string string_field(const json& obj, const char* field, bool required, const std::string& at) {
  auto it = obj.find(field);
  if (it == obj.end() || it->is_null()) {
    if (required) throw DataError(at + ": missing field '" + field + "'");
    return {};
  }
  if (!it->is_string()) throw DataError(at + ": field '" + std::string(field) + "' must be a string");
  return it->get<std::string>();
}

json parse_object(const std::string& line, const std::string& at) {
  json obj;
  try {
    obj = json::parse(line);
  } catch (const json::parse_error& e) {
    throw DataError(at + ": malformed JSON: " + e.what());
  }
  if (!obj.is_object()) throw DataError(at + ": expected a JSON object");
  return obj;
}

}  // namespace

ad::Tensor FrameFeatures::to_tensor() const {
  return ad::Tensor({n_frames, dim}, std::vector<double>(values.begin(), values.end()));
}

std::vector<TripletRecord> parse_triplets(std::string_view jsonl, const std::string& source) {
  std::vector<TripletRecord> out;
  std::set<std::string> seen;
  for (const auto& [line_no, line] : jsonl_lines(jsonl)) {
    const auto at = where(source, line_no);
    const auto obj = parse_object(line, at);
    TripletRecord r;
    r.id = string_field(obj, "id", true, at);
    r.video_id = string_field(obj, "video_id", true, at);
    r.q1 = string_field(obj, "q1", true, at);
    r.d_v = string_field(obj, "d_v", false, at);
    r.q2 = string_field(obj, "q2", true, at);
    r.source_id = string_field(obj, "source_id", false, at);
    if (r.id.empty() || r.video_id.empty()) throw DataError(at + ": id and video_id must be non-empty");
    if (r.q1.empty()) throw DataError(at + ": field 'q1' must be non-empty");
    if (r.q2.empty()) throw DataError(at + ": field 'q2' must be non-empty");
    if (!seen.insert(r.id).second) throw DataError(at + ": duplicate triplet id '" + r.id + "'");
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<TripletRecord> load_triplets(const std::string& path,
                                         const std::set<std::string>* known_videos) {
  auto triplets = parse_triplets(io::read_file(path), path);
  if (known_videos) {
    for (std::size_t i = 0; i < triplets.size(); ++i) {
      if (!known_videos->count(triplets[i].video_id)) {
        throw DataError(path + ": triplet '" + triplets[i].id + "' references unknown video '" +
                        triplets[i].video_id + "'");
      }
    }
  }
  return triplets;
}

std::string triplets_to_jsonl(const std::vector<TripletRecord>& triplets) {
  std::string out;
  for (const auto& r : triplets) {
    json obj;
    obj["id"] = r.id;
    obj["video_id"] = r.video_id;
    obj["q1"] = r.q1;
    obj["d_v"] = r.d_v;
    obj["q2"] = r.q2;
    obj["source_id"] = r.source_id;
    out += obj.dump() + "\n";
  }
  return out;
}

std::vector<ManifestEntry> parse_manifest(std::string_view jsonl, const std::string& source) {
  std::vector<ManifestEntry> out;
  std::set<std::string> seen;
  for (const auto& [line_no, line] : jsonl_lines(jsonl)) {
    const auto at = where(source, line_no);
    const auto obj = parse_object(line, at);
    ManifestEntry e;
    e.video_id = string_field(obj, "video_id", true, at);
    e.feature_path = string_field(obj, "feature_path", true, at);
    e.source_id = string_field(obj, "source_id", true, at);
    if (!seen.insert(e.video_id).second) {
      throw DataError(at + ": duplicate video id '" + e.video_id + "'");
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::string manifest_to_jsonl(const std::vector<ManifestEntry>& entries) {
  std::string out;
  for (const auto& e : entries) {
    json obj;
    obj["video_id"] = e.video_id;
    obj["feature_path"] = e.feature_path;
    obj["source_id"] = e.source_id;
    out += obj.dump() + "\n";
  }
  return out;
}

std::string encode_frame_features(const FrameFeatures& f) {
  if (f.values.size() != f.n_frames * f.dim) {
    throw DimensionError("frame features for '" + f.video_id + "' hold " +
                         std::to_string(f.values.size()) + " values, expected " +
                         std::to_string(f.n_frames) + "x" + std::to_string(f.dim));
  }
  io::ByteWriter w;
  w.bytes(kFeatureMagic);
  w.u16(kFeatureVersion);
  w.u32(static_cast<std::uint32_t>(f.dim));
  w.u32(static_cast<std::uint32_t>(f.n_frames));
  for (auto v : f.values) w.f32(v);
  return w.release();
}

FrameFeatures decode_frame_features(std::string_view bytes, const std::string& source,
                                    std::string video_id) {
  io::ByteReader r(bytes, source);
  r.expect_magic(kFeatureMagic);
  const auto version_at = r.offset();
  const auto version = r.u16();
  if (version != kFeatureVersion) {
    throw FormatError(source, version_at, "unsupported feature version " + std::to_string(version));
  }
  FrameFeatures f;
  f.video_id = std::move(video_id);
  f.dim = r.u32();
  f.n_frames = r.u32();
  const auto payload_at = r.offset();
  const auto expected = f.n_frames * f.dim * sizeof(float);
  if (r.remaining() < expected) {
    throw FormatError(source, payload_at + r.remaining(),
                      "truncated payload: expected " + std::to_string(expected) + " bytes after offset " +
                          std::to_string(payload_at) + ", found " + std::to_string(r.remaining()));
  }
  if (r.remaining() > expected) {
    throw FormatError(source, payload_at + expected, "trailing bytes after payload");
  }
  f.values.resize(f.n_frames * f.dim);
  for (auto& v : f.values) {
    const auto at = r.offset();
    v = r.f32();
    if (!std::isfinite(v)) throw FormatError(source, at, "non-finite feature value");
  }
  return f;
}

void write_frame_features(const std::string& path, const FrameFeatures& features) {
  io::write_file(path, encode_frame_features(features));
}

FrameFeatures read_frame_features(const std::string& path, std::string video_id) {
  return decode_frame_features(io::read_file(path), path, std::move(video_id));
}

Corpus Corpus::load(const std::string& dir) {
  Corpus c;
  c.dir = dir;
  const auto manifest_path = (fs::path(dir) / "manifest.jsonl").string();
  c.manifest = parse_manifest(io::read_file(manifest_path), manifest_path);
  std::set<std::string> known;
  std::map<std::string, std::string> source_of;
  for (const auto& e : c.manifest) {
    known.insert(e.video_id);
    source_of[e.video_id] = e.source_id;
  }
  c.triplets = load_triplets((fs::path(dir) / "triplets.jsonl").string(), &known);
  for (auto& t : c.triplets) {
    if (t.source_id.empty()) t.source_id = source_of[t.video_id];
  }
  for (const auto& e : c.manifest) {
    const auto path = (fs::path(dir) / e.feature_path).string();
    try {
      c.features.emplace(e.video_id, read_frame_features(path, e.video_id));
    } catch (const Error& err) {
      c.feature_errors.emplace(e.video_id, err.what());
    }
  }
  return c;
}

const ManifestEntry* Corpus::video(const std::string& video_id) const {
  for (const auto& e : manifest) {
    if (e.video_id == video_id) return &e;
  }
  return nullptr;
}

const FrameFeatures* Corpus::frames(const std::string& video_id) const {
  auto it = features.find(video_id);
  return it == features.end() ? nullptr : &it->second;
}

std::vector<std::string> Corpus::video_ids() const {
  std::vector<std::string> out;
  for (const auto& e : manifest) out.push_back(e.video_id);
  return out;
}

std::vector<std::string> Corpus::query_texts() const {
  std::vector<std::string> out;
  for (const auto& t : triplets) {
    out.push_back(t.q1);
    out.push_back(t.q2);
  }
  return out;
}

void write_corpus_files(const std::string& dir, const std::vector<TripletRecord>& triplets,
                        const std::vector<ManifestEntry>& manifest,
                        const std::vector<FrameFeatures>& features) {
  fs::create_directories(fs::path(dir) / "features");
  io::write_file((fs::path(dir) / "triplets.jsonl").string(), triplets_to_jsonl(triplets));
  io::write_file((fs::path(dir) / "manifest.jsonl").string(), manifest_to_jsonl(manifest));
  std::map<std::string, std::string> path_of;
  for (const auto& e : manifest) path_of[e.video_id] = e.feature_path;
  for (const auto& f : features) {
    auto it = path_of.find(f.video_id);
    if (it == path_of.end()) throw DataError("features for '" + f.video_id + "' have no manifest entry");
    write_frame_features((fs::path(dir) / it->second).string(), f);
  }
}

ValidationReport validate_corpus(const std::string& dir) {
  ValidationReport report;
  const auto manifest_path = (fs::path(dir) / "manifest.jsonl").string();
  const auto triplets_path = (fs::path(dir) / "triplets.jsonl").string();

  std::vector<ManifestEntry> manifest;
  try {
    manifest = parse_manifest(io::read_file(manifest_path), manifest_path);
  } catch (const Error& e) {
    report.violations.push_back({"schema", manifest_path, e.what()});
  }
  std::vector<TripletRecord> triplets;
  try {
    triplets = parse_triplets(io::read_file(triplets_path), triplets_path);
  } catch (const Error& e) {
    report.violations.push_back({"schema", triplets_path, e.what()});
  }
  report.videos = manifest.size();
  report.triplets = triplets.size();

  std::set<std::string> sources, known, readable;
  for (const auto& e : manifest) {
    sources.insert(e.source_id);
    known.insert(e.video_id);
    const auto path = (fs::path(dir) / e.feature_path).string();
    if (!fs::exists(path)) {
      report.violations.push_back(
          {"dangling_reference", path, "feature file for video '" + e.video_id + "' is missing"});
      continue;
    }
    try {
      const auto f = read_frame_features(path, e.video_id);
      if (!report.n_frames) {
        report.n_frames = f.n_frames;
        report.dim = f.dim;
      }
      if (f.n_frames != *report.n_frames || f.dim != *report.dim) {
        report.violations.push_back(
            {"shape", path,
             "features are " + std::to_string(f.n_frames) + "x" + std::to_string(f.dim) +
                 ", corpus uses " + std::to_string(*report.n_frames) + "x" + std::to_string(*report.dim)});
      }
      readable.insert(e.video_id);
    } catch (const Error& err) {
      report.violations.push_back({"format", path, err.what()});
    }
  }
  for (const auto& t : triplets) {
    if (!known.count(t.video_id)) {
      report.violations.push_back({"dangling_reference", triplets_path,
                                   "triplet '" + t.id + "' references unknown video '" + t.video_id + "'"});
    }
  }
  report.sources = sources.size();
  if (!manifest.empty() && sources.size() < 2) {
    report.violations.push_back(
        {"split", manifest_path, "a grouped train/test split needs at least two sources"});
  }
  return report;
}

}  // namespace datr::data
