// SPDX-License-Identifier: Apache-2.0
//
// Binary tensor snapshot used for checkpoints and dataset files.
//
// Layout (all integers little-endian):
//   magic      8 bytes  "CLGNSNAP"
//   version    uint32   kSnapshotVersion
//   count      uint64   number of tensors
//   per tensor:
//     name_len uint64, name bytes (UTF-8, no terminator)
//     rank     uint64, extents uint64 x rank
//     data     float64 x product(extents), IEEE-754 little-endian

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "collagan/tensor.hpp"

namespace collagan {

inline constexpr char kSnapshotMagic[8] = {'C', 'L', 'G', 'N', 'S', 'N', 'A', 'P'};
inline constexpr std::uint32_t kSnapshotVersion = 1;

/// Malformed or incompatible file contents.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

void write_snapshot(std::ostream& os, std::span<const NamedTensor> tensors);
std::vector<NamedTensor> read_snapshot(std::istream& is);

void save_snapshot(const std::filesystem::path& path, std::span<const NamedTensor> tensors);
std::vector<NamedTensor> load_snapshot(const std::filesystem::path& path);

/// Copies values from `source` into the same-named tensors of `target`
/// (shapes must match). Every target name must be present in the source.
void assign_from_snapshot(std::span<const NamedTensor> target, std::span<const NamedTensor> source);

}  // namespace collagan
