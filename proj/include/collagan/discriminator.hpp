// SPDX-License-Identifier: Apache-2.0
//
// Multi-resolution discriminator with a shared trunk and two heads.
//
//   branch1: conv3 s1 (full res) -> conv4 s2 -> conv4 s2        -> H/4
//   branch2: avgpool2 x2 (quarter res) -> conv3 s1              -> H/4
//   branch3: conv4 s2 -> conv4 s2                               -> H/4
//   trunk  : concat(3c) -> 3 x [conv4 s2 + leaky ReLU] -> dropout -> H/32
//   source head: conv3 s1 -> 1-channel patch map [B,1,H/32,W/32]
//   class head : global average pool -> linear -> N logits
//
// H and W must therefore be divisible by 32.

#pragma once

#include "collagan/generator.hpp"

namespace collagan {

struct DiscriminatorConfig {
    int domains = kNumDomains;
    int base_channels = 8;
    double leaky_slope = 0.2;
    double dropout_rate = 0.5;

    void validate() const;
    bool operator==(const DiscriminatorConfig&) const = default;
};

inline constexpr std::int64_t kDiscriminatorStride = 32;

struct DiscriminatorOutput {
    Tensor patch_map;     // [B,1,H/32,W/32], unbounded
    Tensor class_logits;  // [B,N]
};

class DiscriminatorNet {
public:
    DiscriminatorNet(const DiscriminatorConfig& config, Rng& rng);

    const DiscriminatorConfig& config() const { return config_; }

    /// Dropout draws from rng only when training is true.
    DiscriminatorOutput forward(const Tensor& image, bool training, Rng& rng) const;
    DiscriminatorOutput forward(const Tensor& image) const;

    /// Shared features before the heads (after dropout when training).
    Tensor trunk_features(const Tensor& image, bool training, Rng& rng) const;

    std::vector<NamedTensor> parameters() const;
    std::vector<NamedTensor> trunk_parameters() const;
    std::vector<NamedTensor> source_head_parameters() const;
    std::vector<NamedTensor> class_head_parameters() const;

    /// Input of branch 2: two successive 2x2 average pools.
    static Tensor quarter_resolution(const Tensor& image);

private:
    DiscriminatorConfig config_;
    Conv2d b1_full_, b1_down1_, b1_down2_;
    Conv2d b2_conv_;
    Conv2d b3_down1_, b3_down2_;
    Conv2d trunk1_, trunk2_, trunk3_;
    Conv2d source_head_;
    Linear class_head_;
};

DiscriminatorOutput discriminate(const DiscriminatorNet& net, const Tensor& image, bool training, Rng& rng);

/// Constant LSGAN regression target (1 = real, 0 = fake) of the given shape.
Tensor patchgan_target(const Shape& shape, int value);

}  // namespace collagan
