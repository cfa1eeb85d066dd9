#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "kavi/tensor.hpp"

namespace kavi {

// Named parameter or buffer, the unit of checkpoint serialization.
using NamedTensor = std::pair<std::string, Tensor>;

// Flat versioned binary, all integers and payloads little-endian:
//   u32 magic, u32 version, u64 tensor count,
//   then per tensor: u32 name length, name bytes, u32 rank, u64 dims, f64 data.
inline constexpr std::uint32_t kCheckpointMagic = 0x4B415649u;
inline constexpr std::uint32_t kCheckpointVersion = 1u;

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::string& path);

// Copies loaded values into live tensors, matched by name. Every destination
// name must appear in `loaded` with the same shape, and vice versa. Call
// between training steps: writing into a tensor some recorded tape entry
// still references is undefined.
void restore_state(const std::vector<NamedTensor>& destination,
                   const std::vector<NamedTensor>& loaded);

}  // namespace kavi
