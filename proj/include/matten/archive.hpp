#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "matten/tensor.hpp"

// Tensor archive: the on-disk format shared by checkpoints, datasets and
// samples. Little-endian throughout:
//
//   "MTTN"                 4 magic bytes
//   version                u32 (currently 1)
//   count                  u32
//   per tensor:
//     name length          u32, then that many UTF-8 bytes
//     rank                 u32
//     extents              u32 x rank
//     dtype tag            u32 (0 = f32, 1 = f64)
//     payload              numel x (4 or 8) bytes, IEEE-754
namespace matten {

inline constexpr std::uint32_t kArchiveVersion = 1;

void write_archive(std::ostream& out, std::span<const NamedTensor> tensors);
std::vector<NamedTensor> read_archive(std::istream& in);

void save_archive(const std::filesystem::path& path,
                  std::span<const NamedTensor> tensors);
std::vector<NamedTensor> load_archive(const std::filesystem::path& path);

}  // namespace matten
