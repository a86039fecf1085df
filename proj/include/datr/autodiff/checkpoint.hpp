#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "datr/autodiff/tensor.hpp"
#include "datr/io/binary.hpp"

namespace datr::ad {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Parameter checkpoint.
//
// Layout (all integers little-endian):
//   "DATRW\0"            6-byte magic
//   u16                  format version (1)
//   u32 + bytes          embedded config text (key=value lines, UTF-8)
//   u32                  tensor count
//   per tensor:          u32 + name bytes, u8 ndim, u64 dims[ndim], u64 payload offset
//   payload              f64 values, row-major, concatenated in manifest order
struct Checkpoint {
  std::string config_text;
  std::vector<NamedTensor> tensors;

  const Tensor& find(std::string_view name) const;
};

inline constexpr std::uint16_t kCheckpointVersion = 1;

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string_view bytes, const std::string& source = "<memory>");
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace datr::ad
