#pragma once

#include <cstdint>
#include <filesystem>
#include <string_view>

#include "plasbench/network.hpp"
#include "plasbench/optimizer.hpp"

namespace plasbench {

/// Binary checkpoint container, all integers little-endian:
///
///   magic        8 bytes  "PLASBNCH"
///   version      u16      (currently 1)
///   section      u8       0x01 = model parameters
///     groups     u8       number of group records that follow
///     per group: id u8, tensor count u16, then per tensor:
///                rank u8, extents u32 × rank, values f32 × prod(extents)
///   section      u8       0x02 = optimizer state (optional)
///     step_count u64
///     groups     u8, same group framing; per parameter two tensors
///                (first slot, second slot), zeros when a slot is unused
///
/// Within a model group, tensors are the group's parameters in network
/// order followed by running mean and running variance of each of the
/// group's batch-norm layers.
inline constexpr std::string_view kCheckpointMagic = "PLASBNCH";
inline constexpr std::uint16_t kCheckpointVersion = 1;
inline constexpr std::uint8_t kModelSection = 0x01;
inline constexpr std::uint8_t kOptimizerSection = 0x02;

void save_checkpoint(const std::filesystem::path& path, const Network<float>& net,
                     const OptimizerState<float>* optimizer = nullptr);

/// Loads into an already-built network of the same architecture. Throws
/// FormatError on bad magic, version, truncation or shape mismatch.
/// Returns true when an optimizer section was present and loaded.
bool load_checkpoint(const std::filesystem::path& path, Network<float>& net,
                     OptimizerState<float>* optimizer = nullptr);

}  // namespace plasbench
