#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "denet/tensor.hpp"

namespace denet {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

inline constexpr char kCheckpointMagic[] = "DENETCKPT1";

/// Binary layout, all integers little-endian:
///   "DENETCKPT1"
///   repeated until EOF:
///     u32 name_len, name bytes (UTF-8)
///     u32 rank, rank x u32 extents
///     prod(extents) x f64, row-major
std::string encode_checkpoint(const NamedTensors& tensors);
NamedTensors decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors load_checkpoint(const std::filesystem::path& path);

}  // namespace denet
