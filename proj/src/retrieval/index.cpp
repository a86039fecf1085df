#include "datr/retrieval/index.hpp"

#include <cmath>

#include "datr/error.hpp"

namespace datr::retrieval {

namespace {
constexpr std::string_view kMagic{"DATRI\0", 6};
constexpr double kNormTolerance = 1e-5;
}  // namespace

EmbeddingIndex::EmbeddingIndex(std::vector<std::string> ids, std::vector<double> matrix,
                               std::size_t d, io::Digest checkpoint_hash)
    : ids_(std::move(ids)), matrix_(std::move(matrix)), d_(d), hash_(checkpoint_hash) {
  if (matrix_.size() != ids_.size() * d_) {
    throw DimensionError("index matrix holds " + std::to_string(matrix_.size()) + " values for " +
                         std::to_string(ids_.size()) + " ids of width " + std::to_string(d_));
  }
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!positions_.emplace(ids_[i], i).second) {
      throw DataError("duplicate video id '" + ids_[i] + "' in index");
    }
    double ss = 0.0;
    for (auto v : row(i)) ss += v * v;
    if (std::abs(std::sqrt(ss) - 1.0) > kNormTolerance) {
      throw NumericError("index row for '" + ids_[i] + "' is not unit norm");
    }
  }
}

std::span<const double> EmbeddingIndex::row(std::size_t i) const {
  return std::span<const double>(matrix_).subspan(i * d_, d_);
}

std::optional<std::size_t> EmbeddingIndex::position(const std::string& video_id) const {
  auto it = positions_.find(video_id);
  if (it == positions_.end()) return std::nullopt;
  return it->second;
}

io::Digest model_hash(const model::Model& m) {
  return io::sha256(ad::encode_checkpoint(m.to_checkpoint()));
}

EmbeddingIndex build_index(const data::Corpus& corpus, const std::vector<std::string>& video_ids,
                           const model::Model& m) {
  std::string missing;
  for (const auto& id : video_ids) {
    if (!corpus.frames(id)) missing += (missing.empty() ? "" : ", ") + id;
  }
  if (!missing.empty()) throw DataError("missing frame features for: " + missing);
  const auto d = m.config().d;
  std::vector<double> matrix;
  matrix.reserve(video_ids.size() * d);
  for (const auto& id : video_ids) {
    const auto z = model::encode_video(m, corpus.frames(id)->to_tensor());
    matrix.insert(matrix.end(), z.data().begin(), z.data().end());
  }
  return EmbeddingIndex(video_ids, std::move(matrix), d, model_hash(m));
}

std::string encode_index(const EmbeddingIndex& index) {
  io::ByteWriter w;
  w.bytes(kMagic);
  w.u16(kIndexVersion);
  w.u32(static_cast<std::uint32_t>(index.size()));
  w.u32(static_cast<std::uint32_t>(index.dim()));
  for (auto b : index.checkpoint_hash()) w.u8(b);
  for (const auto& id : index.ids()) w.string(id);
  for (auto v : index.matrix()) w.f64(v);
  return w.release();
}

EmbeddingIndex decode_index(std::string_view bytes, const std::string& source) {
  io::ByteReader r(bytes, source);
  r.expect_magic(kMagic);
  const auto version_at = r.offset();
  const auto version = r.u16();
  if (version != kIndexVersion) {
    throw FormatError(source, version_at, "unsupported index version " + std::to_string(version));
  }
  const auto n = r.u32();
  const auto d = r.u32();
  io::Digest hash{};
  for (auto& b : hash) b = r.u8();
  std::vector<std::string> ids;
  ids.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) ids.push_back(r.string());
  const auto payload_at = r.offset();
  const std::size_t expected = static_cast<std::size_t>(n) * d * sizeof(double);
  if (r.remaining() != expected) {
    throw FormatError(source, payload_at + std::min(r.remaining(), expected),
                      "row payload holds " + std::to_string(r.remaining()) + " bytes, expected " +
                          std::to_string(expected));
  }
  std::vector<double> matrix(static_cast<std::size_t>(n) * d);
  for (auto& v : matrix) v = r.f64();
  try {
    return EmbeddingIndex(std::move(ids), std::move(matrix), d, hash);
  } catch (const FormatError&) {
    throw;
  } catch (const Error& e) {
    throw FormatError(source, payload_at, e.what());
  }
}

void save_index(const std::string& path, const EmbeddingIndex& index) {
  io::write_file(path, encode_index(index));
}

EmbeddingIndex load_index(const std::string& path) { return decode_index(io::read_file(path), path); }

}  // namespace datr::retrieval
