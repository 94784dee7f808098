// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "collagan/layers.hpp"

namespace collagan::test {

inline Tensor uniform_tensor(const Shape& shape, Rng& rng, double lo = -2.0, double hi = 2.0,
                             bool requires_grad = false) {
    std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
    for (double& x : v) x = lo + (hi - lo) * uniform01(rng);
    return Tensor::from_data(shape, std::move(v), requires_grad);
}

inline bool bitwise_equal(std::span<const double> a, std::span<const double> b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() && bitwise_equal(a.data(), b.data());
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

/// Deep copy of every parameter value, for before/after comparisons.
inline std::vector<std::vector<double>> snapshot_values(const std::vector<NamedTensor>& params) {
    std::vector<std::vector<double>> out;
    for (const auto& p : params) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
    return out;
}

inline bool values_equal(const std::vector<NamedTensor>& params, const std::vector<std::vector<double>>& saved) {
    if (params.size() != saved.size()) return false;
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!bitwise_equal(params[i].tensor.data(), saved[i])) return false;
    }
    return true;
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& name) : path_(std::filesystem::temp_directory_path() / ("collagan_" + name)) {
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

}  // namespace collagan::test
