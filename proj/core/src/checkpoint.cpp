#include "xlkd/checkpoint.hpp"

#include <set>

#include "xlkd/io.hpp"

namespace xlkd {

std::string serialize_checkpoint(const ParamList& groups) {
  std::set<std::string> seen;
  std::string out(kCheckpointMagic);
  io::put_u32(out, static_cast<std::uint32_t>(groups.size()));
  std::uint64_t offset = 0;
  for (const auto& g : groups) {
    if (!seen.insert(g.name).second) throw std::invalid_argument("duplicate checkpoint group " + g.name);
    io::put_u32(out, static_cast<std::uint32_t>(g.name.size()));
    out += g.name;
    io::put_u32(out, static_cast<std::uint32_t>(g.tensor.rank()));
    for (auto e : g.tensor.shape()) io::put_u64(out, e);
    io::put_u8(out, g.frozen ? 1 : 0);
    io::put_u64(out, offset);
    offset += g.tensor.numel() * sizeof(double);
  }
  io::put_u64(out, offset);
  std::string payload;
  payload.reserve(offset);
  for (const auto& g : groups) {
    for (double v : g.tensor.data()) io::put_f64(payload, v);
  }
  out += payload;
  io::put_u64(out, io::fnv1a64(payload));
  return out;
}

ParamList deserialize_checkpoint(std::string_view bytes) {
  using Kind = CheckpointError::Kind;
  if (bytes.size() < kCheckpointMagic.size() || bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) {
    throw CheckpointError(Kind::kBadMagic, "checkpoint: bad magic (expected XLKD1)");
  }
  struct Entry {
    std::string name;
    Shape shape;
    bool frozen;
    std::uint64_t offset;
  };
  std::vector<Entry> entries;
  std::uint64_t payload_len = 0;
  io::Reader in(bytes.substr(kCheckpointMagic.size()));
  try {
    const auto count = in.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
      Entry e;
      e.name = std::string(in.take(in.u32()));
      const auto rank = in.u32();
      for (std::uint32_t r = 0; r < rank; ++r) e.shape.push_back(in.u64());
      e.frozen = in.u8() != 0;
      e.offset = in.u64();
      entries.push_back(std::move(e));
    }
    payload_len = in.u64();
  } catch (const io::IoError&) {
    throw CheckpointError(Kind::kTruncated, "checkpoint: truncated manifest");
  }
  if (in.remaining() < payload_len + 8) throw CheckpointError(Kind::kTruncated, "checkpoint: truncated payload");
  if (in.remaining() > payload_len + 8) throw CheckpointError(Kind::kMalformed, "checkpoint: trailing bytes");
  const std::string_view payload = in.take(payload_len);
  const std::uint64_t stored = in.u64();
  if (io::fnv1a64(payload) != stored) throw CheckpointError(Kind::kChecksum, "checkpoint: payload checksum mismatch");

  ParamList out;
  std::uint64_t expected = 0;
  for (const auto& e : entries) {
    const std::uint64_t len = numel(e.shape) * sizeof(double);
    if (e.offset != expected || e.offset + len > payload_len) {
      throw CheckpointError(Kind::kMalformed, "checkpoint: manifest offsets overlap or are out of order");
    }
    io::Reader values(payload.substr(e.offset, len));
    std::vector<double> data(numel(e.shape));
    for (auto& v : data) v = values.f64();
    out.push_back({e.name, Tensor(e.shape, std::move(data)), e.frozen});
    expected += len;
  }
  if (expected != payload_len) throw CheckpointError(Kind::kMalformed, "checkpoint: payload length mismatch");
  return out;
}

void save_checkpoint(const ParamList& groups, const std::filesystem::path& path) {
  io::write_atomic(path, serialize_checkpoint(groups));
}

ParamList load_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(io::read_file(path)); }

ParamList select_groups(const ParamList& groups, std::string_view prefix) {
  ParamList out;
  for (const auto& g : groups) {
    if (starts_with(g.name, prefix)) out.push_back(g);
  }
  return out;
}

}  // namespace xlkd
