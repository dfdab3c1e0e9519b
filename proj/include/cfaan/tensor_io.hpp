#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "cfaan/tensor.hpp"

namespace cfaan {

// Binary tensor container:
//   "AAKT" | u32 version | u32 rank | u64 extents[rank] | f64 payload (row-major)
// All integers and floats are little-endian.
inline constexpr char kTensorMagic[4] = {'A', 'A', 'K', 'T'};
inline constexpr std::uint32_t kTensorFormatVersion = 1;

void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);
void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// Writes one container per tensor plus `manifest.txt` with lines
/// `name<TAB>shape<TAB>file`, in the given order.
void save_checkpoint(const std::filesystem::path& dir, const NamedTensors& tensors);
/// Reads the manifest and every listed tensor, in manifest order.
NamedTensors load_checkpoint(const std::filesystem::path& dir);

}  // namespace cfaan
