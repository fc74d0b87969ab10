#pragma once

#include <cstdint>
#include <filesystem>
#include <map>

#include "neq/model.hpp"

namespace neq {

/// Independent 64-bit seed for (master seed, stream, index), via splitmix64
/// finalization. Streams keep data order, mask draws and initialization apart.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index = 0) noexcept;

namespace streams {
inline constexpr std::uint64_t init = 1;
inline constexpr std::uint64_t shuffle = 2;
inline constexpr std::uint64_t mask = 3;
inline constexpr std::uint64_t data = 4;
inline constexpr std::uint64_t split = 5;
}  // namespace streams

/// Freezes each tracked neuron independently with probability p. Untracked
/// layers (the classifier) are never frozen.
FreezeMask stochastic_mask(const ModelLayout& layout, double p, std::uint64_t epoch_seed);

/// Masks keyed by the epoch they were applied in.
using MaskSequence = std::map<int, FreezeMask>;

/// Text format: a "# epoch layer_id neuron_index" header, then one line per
/// frozen neuron in epoch, forward-layer, index order.
void write_mask_replay(const std::filesystem::path& path, const ModelLayout& layout, const MaskSequence& masks);

/// Epochs without lines read back as all-live masks when asked for. Throws
/// DataError on unknown layers, bad indices or malformed lines.
MaskSequence read_mask_replay(const std::filesystem::path& path, const ModelLayout& layout);

/// Mask for `epoch` from a replay sequence (all live if absent).
FreezeMask replay_mask(const MaskSequence& masks, const ModelLayout& layout, int epoch);

}  // namespace neq
