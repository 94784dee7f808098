// SPDX-License-Identifier: Apache-2.0

#include "collagan/snapshot.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <unordered_map>

namespace collagan {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

namespace {

template <typename T>
T to_little(T v) {
    if constexpr (std::endian::native == std::endian::big) {
        auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
        std::reverse(bytes.begin(), bytes.end());
        return std::bit_cast<T>(bytes);
    }
    return v;
}

template <typename T>
void put(std::ostream& os, T v) {
    v = to_little(v);
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const char* what) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw FormatError(std::string("truncated snapshot: ") + what);
    return to_little(v);
}

// Guards against absurd allocations from corrupt headers.
constexpr std::uint64_t kMaxNameLength = 1 << 16;
constexpr std::uint64_t kMaxRank = 16;

}  // namespace

void write_snapshot(std::ostream& os, std::span<const NamedTensor> tensors) {
    os.write(kSnapshotMagic, sizeof(kSnapshotMagic));
    put<std::uint32_t>(os, kSnapshotVersion);
    put<std::uint64_t>(os, tensors.size());
    for (const auto& nt : tensors) {
        put<std::uint64_t>(os, nt.name.size());
        os.write(nt.name.data(), static_cast<std::streamsize>(nt.name.size()));
        const auto& shape = nt.tensor.shape();
        put<std::uint64_t>(os, shape.size());
        for (auto e : shape) put<std::uint64_t>(os, static_cast<std::uint64_t>(e));
        for (double v : nt.tensor.data()) put<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
    }
    if (!os) throw FormatError("failed writing snapshot");
}

std::vector<NamedTensor> read_snapshot(std::istream& is) {
    char magic[sizeof(kSnapshotMagic)];
    if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kSnapshotMagic, sizeof(magic)) != 0) {
        throw FormatError("bad snapshot magic (not a collagan snapshot file)");
    }
    const auto version = get<std::uint32_t>(is, "version");
    if (version != kSnapshotVersion) {
        throw FormatError("unsupported snapshot version " + std::to_string(version) + " (expected " +
                          std::to_string(kSnapshotVersion) + ")");
    }
    const auto count = get<std::uint64_t>(is, "tensor count");
    std::vector<NamedTensor> out;
    for (std::uint64_t t = 0; t < count; ++t) {
        const auto name_len = get<std::uint64_t>(is, "name length");
        if (name_len > kMaxNameLength) throw FormatError("corrupt snapshot: name length too large");
        std::string name(name_len, '\0');
        if (!is.read(name.data(), static_cast<std::streamsize>(name_len))) throw FormatError("truncated snapshot: name");
        const auto rank = get<std::uint64_t>(is, "rank");
        if (rank > kMaxRank) throw FormatError("corrupt snapshot: rank too large for '" + name + "'");
        Shape shape;
        for (std::uint64_t i = 0; i < rank; ++i) {
            shape.push_back(static_cast<std::int64_t>(get<std::uint64_t>(is, "extent")));
        }
        const auto n = static_cast<std::size_t>(shape_numel(shape));
        std::vector<double> data(n);
        for (std::size_t i = 0; i < n; ++i) data[i] = std::bit_cast<double>(get<std::uint64_t>(is, "data"));
        out.push_back({std::move(name), Tensor::from_data(std::move(shape), std::move(data))});
    }
    return out;
}

void save_snapshot(const std::filesystem::path& path, std::span<const NamedTensor> tensors) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("cannot open " + path.string() + " for writing");
    write_snapshot(os, tensors);
}

std::vector<NamedTensor> load_snapshot(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open " + path.string());
    return read_snapshot(is);
}

void assign_from_snapshot(std::span<const NamedTensor> target, std::span<const NamedTensor> source) {
    std::unordered_map<std::string, const Tensor*> by_name;
    for (const auto& s : source) by_name[s.name] = &s.tensor;
    for (const auto& t : target) {
        auto it = by_name.find(t.name);
        if (it == by_name.end()) throw FormatError("snapshot is missing tensor '" + t.name + "'");
        if (it->second->shape() != t.tensor.shape()) {
            throw FormatError("shape mismatch for '" + t.name + "': file has " + shape_to_string(it->second->shape()) +
                              ", expected " + shape_to_string(t.tensor.shape()));
        }
        Tensor dst = t.tensor;
        auto src = it->second->data();
        std::copy(src.begin(), src.end(), dst.mutable_data().begin());
    }
}

}  // namespace collagan
