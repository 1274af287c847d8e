// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "tcfnet/adam.hpp"

namespace tcfnet {

// Checkpoint file layout (little-endian):
//   magic "TCFN" | u16 version | u32 param count
//   per parameter: u16 name length, UTF-8 name, u8 rank, u32 dims, f32 data
// Values are stored in 32-bit; loading widens back to 64-bit, so
// save(load(f)) is byte-identical to f.
inline constexpr uint16_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const std::vector<Parameter>& params);
std::vector<Parameter> load_checkpoint(const std::string& path);

}  // namespace tcfnet
