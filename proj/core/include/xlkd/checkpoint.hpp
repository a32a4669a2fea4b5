#pragma once

// "XLKD1" checkpoint files:
//
//   magic    "XLKD1"
//   u32      entry count
//   entries  u32 name length, name bytes, u32 rank, u64 extents[rank],
//            u8 frozen, u64 byte offset into the payload
//   u64      payload length in bytes
//   payload  little-endian float64 values, row-major, in manifest order
//   u64      FNV-1a 64 checksum of the payload bytes

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

#include "xlkd/params.hpp"

namespace xlkd {

inline constexpr std::string_view kCheckpointMagic = "XLKD1";

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { kBadMagic, kChecksum, kTruncated, kMalformed };
  CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

std::string serialize_checkpoint(const ParamList& groups);
ParamList deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const ParamList& groups, const std::filesystem::path& path);
ParamList load_checkpoint(const std::filesystem::path& path);

// Subset whose names start with `prefix`.
ParamList select_groups(const ParamList& groups, std::string_view prefix);

}  // namespace xlkd
