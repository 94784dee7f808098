// SPDX-License-Identifier: Apache-2.0

#include "collagan/layers.hpp"

#include <cmath>

namespace collagan {

Tensor init_weight(const Shape& shape, std::int64_t fan_in, double slope, Rng& rng) {
    const double gain = std::sqrt(2.0 / (1.0 + slope * slope));
    std::normal_distribution<double> dist(0.0, gain / std::sqrt(static_cast<double>(fan_in)));
    std::vector<double> data(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& v : data) v = dist(rng);
    return Tensor::from_data(shape, std::move(data), true);
}

Conv2d Conv2d::create(std::int64_t in_channels, std::int64_t out_channels, int kernel, int stride, int padding,
                      double slope, Rng& rng) {
    Conv2d c;
    c.weight = init_weight({out_channels, in_channels, kernel, kernel}, in_channels * kernel * kernel, slope, rng);
    c.bias = Tensor::zeros({out_channels}, true);
    c.stride = stride;
    c.padding = padding;
    return c;
}

void Conv2d::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
}

ConvTranspose2d ConvTranspose2d::create(std::int64_t in_channels, std::int64_t out_channels, double slope, Rng& rng) {
    ConvTranspose2d c;
    // Each output pixel of a stride-2 4x4 transposed conv sees 2x2 taps per input channel.
    c.weight = init_weight({in_channels, out_channels, 4, 4}, in_channels * 4, slope, rng);
    c.bias = Tensor::zeros({out_channels}, true);
    return c;
}

void ConvTranspose2d::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
}

Linear Linear::create(std::int64_t in_features, std::int64_t out_features, double slope, Rng& rng) {
    Linear l;
    l.weight = init_weight({out_features, in_features}, in_features, slope, rng);
    l.bias = Tensor::zeros({out_features}, true);
    return l;
}

void Linear::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
}

void set_trainable(std::span<const NamedTensor> params, bool trainable) {
    for (const auto& p : params) {
        Tensor t = p.tensor;
        t.set_requires_grad(trainable);
    }
}

void zero_grads(std::span<const NamedTensor> params) {
    for (const auto& p : params) {
        Tensor t = p.tensor;
        t.clear_grad();
    }
}

std::int64_t count_parameters(std::span<const NamedTensor> params) {
    std::int64_t n = 0;
    for (const auto& p : params) n += p.tensor.numel();
    return n;
}

}  // namespace collagan
