// Apache License, Version 2.0, refer to LICENSE.txt
#pragma once

#include <string>

#include "sbtm/model.hpp"

namespace sbtm {

// Versioned checkpoint container. Layout:
//   magic "SBTM", u32 version, u64 config-JSON length + bytes,
//   u64 vocabulary hash, u64 vocabulary size, u64 slice count,
//   u64 tensor count, then per tensor: u64 name length, name bytes,
//   u32 rank, u32 dims..., little-endian doubles.
// Save/load/save is byte-identical.
void save_checkpoint(TopicModel& model, const std::string& path);

TopicModel load_checkpoint(const std::string& path);

inline constexpr uint32_t kCheckpointVersion = 1;

}  // namespace sbtm
