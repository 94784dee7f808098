// SPDX-License-Identifier: Apache-2.0
//
// Parameterised layers shared by the generator and discriminator.

#pragma once

#include <random>
#include <string>
#include <vector>

#include "collagan/ops.hpp"
#include "collagan/snapshot.hpp"

namespace collagan {

using Rng = std::mt19937_64;

/// Kaiming-normal initialisation for a leaky-ReLU stack.
Tensor init_weight(const Shape& shape, std::int64_t fan_in, double slope, Rng& rng);

struct Conv2d {
    Tensor weight;  // [Cout,Cin,k,k]
    Tensor bias;    // [Cout]
    int stride = 1;
    int padding = 0;

    static Conv2d create(std::int64_t in_channels, std::int64_t out_channels, int kernel, int stride, int padding,
                         double slope, Rng& rng);
    Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, stride, padding); }
    std::int64_t in_channels() const { return weight.dim(1); }
    std::int64_t out_channels() const { return weight.dim(0); }
    void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

struct ConvTranspose2d {
    Tensor weight;  // [Cin,Cout,4,4]
    Tensor bias;    // [Cout]

    static ConvTranspose2d create(std::int64_t in_channels, std::int64_t out_channels, double slope, Rng& rng);
    Tensor operator()(const Tensor& x) const { return conv_transpose2d(x, weight, bias); }
    void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

struct Linear {
    Tensor weight;  // [out,in]
    Tensor bias;    // [out]

    static Linear create(std::int64_t in_features, std::int64_t out_features, double slope, Rng& rng);
    Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
    void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

/// Sets requires_grad on every tensor in the list.
void set_trainable(std::span<const NamedTensor> params, bool trainable);
void zero_grads(std::span<const NamedTensor> params);
std::int64_t count_parameters(std::span<const NamedTensor> params);

}  // namespace collagan
