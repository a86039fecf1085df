#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "datr/data/corpus.hpp"
#include "datr/io/binary.hpp"
#include "datr/model/model.hpp"

namespace datr::retrieval {

// Unit-norm video embeddings stored as one contiguous row-major N×d block.
class EmbeddingIndex {
 public:
  EmbeddingIndex() = default;
  // Throws if ids repeat, sizes disagree or a row is not unit norm (±1e-5).
  EmbeddingIndex(std::vector<std::string> ids, std::vector<double> matrix, std::size_t d,
                 io::Digest checkpoint_hash);

  std::size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }
  std::size_t dim() const { return d_; }
  const std::vector<std::string>& ids() const { return ids_; }
  const std::vector<double>& matrix() const { return matrix_; }
  const io::Digest& checkpoint_hash() const { return hash_; }

  std::span<const double> row(std::size_t i) const;
  std::optional<std::size_t> position(const std::string& video_id) const;

 private:
  std::vector<std::string> ids_;
  std::vector<double> matrix_;
  std::size_t d_ = 0;
  io::Digest hash_{};
  std::unordered_map<std::string, std::size_t> positions_;
};

// SHA-256 of the model's encoded checkpoint; ties an index to its weights.
io::Digest model_hash(const model::Model& m);

// One row per video, in the given order, via encode_video. Missing frame
// features raise a single DataError listing every offending id.
EmbeddingIndex build_index(const data::Corpus& corpus, const std::vector<std::string>& video_ids,
                           const model::Model& m);

// Index file:
//   "DATRI\0"   6-byte magic
//   u16         version (1)
//   u32 N, u32 d
//   32 bytes    checkpoint SHA-256
//   N × (u32 length + UTF-8 id)
//   N × d f64 rows, little-endian
inline constexpr std::uint16_t kIndexVersion = 1;

std::string encode_index(const EmbeddingIndex& index);
EmbeddingIndex decode_index(std::string_view bytes, const std::string& source = "<memory>");
void save_index(const std::string& path, const EmbeddingIndex& index);
EmbeddingIndex load_index(const std::string& path);

}  // namespace datr::retrieval
