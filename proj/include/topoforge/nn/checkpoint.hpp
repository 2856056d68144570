#pragma once

// Parameter checkpoint file (little-endian), version 1:
//
//   offset  size  field
//   0       8     magic "TOPOCKPT"
//   8       4     u32 version (= 1)
//   12      4     u32 entry count
//   16      8     u64 architecture hash
//
// then per entry, in registry order:
//
//   u32        name length L
//   L bytes    name (UTF-8, e.g. "decoder.0.spade0.gamma.weight")
//   u32        kind: 0 = trainable parameter, 1 = buffer (running statistics)
//   4 x u32    dims N, C, H, W
//   N*C*H*W x f32  values, NCHW order
//
// The architecture hash is FNV-1a 64 over the variant name followed by every
// entry's name and dims, so any structural change is detected before reading values.

#include <cstdint>
#include <filesystem>
#include <string>

#include "topoforge/nn/layers.hpp"

namespace topoforge::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::uint64_t architecture_hash(const std::string& variant, const ParamList<float>& params);

void save_checkpoint(const std::filesystem::path& path, const std::string& variant,
                     const ParamList<float>& params);

/// Reads values into params. Throws LoadError when the file's architecture
/// hash or any entry disagrees with (variant, params); FormatError for
/// unreadable files.
void load_checkpoint(const std::filesystem::path& path, const std::string& variant,
                     ParamList<float>& params);

/// Architecture hash stored in a checkpoint file.
std::uint64_t read_checkpoint_hash(const std::filesystem::path& path);

}  // namespace topoforge::nn
