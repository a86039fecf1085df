#include "datr/autodiff/checkpoint.hpp"

#include <cmath>

#include "datr/error.hpp"

namespace datr::ad {

namespace {
constexpr std::string_view kMagic{"DATRW\0", 6};
}

const Tensor& Checkpoint::find(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.tensor;
  }
  throw DataError("checkpoint has no tensor named '" + std::string(name) + "'");
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  io::ByteWriter w;
  w.bytes(kMagic);
  w.u16(kCheckpointVersion);
  w.string(ckpt.config_text);
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  std::uint64_t offset = 0;
  for (const auto& t : ckpt.tensors) {
    w.string(t.name);
    const auto& shape = t.tensor.shape();
    w.u8(static_cast<std::uint8_t>(shape.size()));
    for (auto s : shape) w.u64(s);
    w.u64(offset);
    offset += t.tensor.numel() * sizeof(double);
  }
  for (const auto& t : ckpt.tensors) {
    for (auto v : t.tensor.data()) w.f64(v);
  }
  return w.release();
}

Checkpoint decode_checkpoint(std::string_view bytes, const std::string& source) {
  io::ByteReader r(bytes, source);
  r.expect_magic(kMagic);
  const auto version_at = r.offset();
  const auto version = r.u16();
  if (version != kCheckpointVersion) {
    throw FormatError(source, version_at, "unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.config_text = r.string();
  const auto count = r.u32();
  struct Entry {
    std::string name;
    Shape shape;
    std::uint64_t offset;
    std::size_t manifest_at;
  };
  std::vector<Entry> entries;
  std::uint64_t expected_offset = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    Entry e;
    e.manifest_at = r.offset();
    e.name = r.string();
    const auto ndim = r.u8();
    for (std::uint8_t d = 0; d < ndim; ++d) e.shape.push_back(static_cast<std::size_t>(r.u64()));
    const auto offset_at = r.offset();
    e.offset = r.u64();
    if (e.offset != expected_offset) {
      throw FormatError(source, offset_at, "payload offset " + std::to_string(e.offset) +
                                               " for '" + e.name + "' is not contiguous");
    }
    expected_offset += shape_numel(e.shape) * sizeof(double);
    entries.push_back(std::move(e));
  }
  const auto payload_start = r.offset();
  if (r.remaining() != expected_offset) {
    throw FormatError(source, payload_start + std::min<std::size_t>(r.remaining(), expected_offset),
                      "payload holds " + std::to_string(r.remaining()) + " bytes, manifest expects " +
                          std::to_string(expected_offset));
  }
  for (auto& e : entries) {
    std::vector<Scalar> values(shape_numel(e.shape));
    for (auto& v : values) {
      const auto at = r.offset();
      v = r.f64();
      if (!std::isfinite(v)) throw FormatError(source, at, "non-finite value in '" + e.name + "'");
    }
    ckpt.tensors.push_back({std::move(e.name), Tensor(std::move(e.shape), std::move(values))});
  }
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  io::write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) {
  return decode_checkpoint(io::read_file(path), path);
}

}  // namespace datr::ad
