#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "sirst/network.hpp"

namespace sirst {

/// Binary checkpoint, all integers and floats little-endian:
///
///   offset  size  field
///   0       8     magic "SIRSTCK1"
///   8       4     u32 format version (1)
///   12      8     u64 seed
///   20      8     u64 step counter
///   28      4     u32 n, followed by n bytes of UTF-8 JSON (network spec)
///   ...     4     u32 parameter count, then per parameter:
///                   u32 name length, name bytes,
///                   u32 rank, rank x u32 extents,
///                   u8 flags (bit 0: accumulator follows),
///                   numel x f64 values, [numel x f64 accumulator]
struct Checkpoint {
  NetworkSpec spec;
  ParamStore params;
  std::uint64_t step = 0;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string spec_to_json(const NetworkSpec& spec);
NetworkSpec spec_from_json(const std::string& text);

void save_checkpoint(const std::filesystem::path& path, const NetworkSpec& spec, const ParamStore& params,
                     std::uint64_t step);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace sirst
