// SPDX-License-Identifier: Apache-2.0
//
// Collaborative generator: one encoder branch per domain, CCNL blocks, and a
// decoder whose levels are gated by conditional channel attention.
//
//   branch i input : concat(x_i, mask.spatial)            [B, 1+N, H, W]
//   encoder level l: CCNL -> (downsample conv -> CCNL)...  2*base*2^l channels
//   decoder level l: [up(prev) ++ skips_l] -> CCNL -> CCAM
//   output         : 1x1 conv -> [B, 1, H, W]
//
// The branch that corresponds to the target domain receives the missing-slot
// placeholder, so parameter shapes do not depend on which domain is missing.

#pragma once

#include <cstdint>
#include <vector>

#include "collagan/layers.hpp"

#ifndef COLLAGAN_NUM_DOMAINS
#define COLLAGAN_NUM_DOMAINS 4
#endif

namespace collagan {

/// Default number of image domains (contrasts).
inline constexpr int kNumDomains = COLLAGAN_NUM_DOMAINS;

/// One-hot target-domain encoding in both forms used by the generator:
/// a spatial [B,N,H,W] map for encoder inputs and a [B,N] vector for CCAM.
class TargetMask {
public:
    TargetMask(int domain, int num_domains, std::int64_t batch, std::int64_t height, std::int64_t width);

    int domain() const { return domain_; }
    int num_domains() const { return num_domains_; }
    const Tensor& spatial() const { return spatial_; }
    const Tensor& vector() const { return vector_; }

private:
    int domain_;
    int num_domains_;
    Tensor spatial_;
    Tensor vector_;
};

/// Parallel 1x1 and 3x3 convolutions, concatenated, instance-normalised and
/// passed through a leaky ReLU. Output channels = c1 + c3.
struct CCNLUnit {
    Conv2d conv1x1;
    Conv2d conv3x3;
    double slope = 0.2;

    static CCNLUnit create(std::int64_t in_channels, std::int64_t c1, std::int64_t c3, double slope, Rng& rng);
    Tensor forward(const Tensor& x) const;
    std::int64_t in_channels() const { return conv1x1.in_channels(); }
    std::int64_t out_channels() const { return conv1x1.out_channels() + conv3x3.out_channels(); }
    void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

/// Conditional channel attention: X * sigmoid(MLP([avgpool(X), m])).
/// The MLP is Linear(C+N -> hidden) -> leaky ReLU -> Linear(hidden -> C).
struct CCAMUnit {
    Linear hidden;
    Linear out;
    double slope = 0.2;

    static CCAMUnit create(std::int64_t channels, int num_domains, double slope, Rng& rng);
    /// The per-channel scaling weights in (0,1), shape [B,C].
    Tensor attention(const Tensor& features, const TargetMask& mask) const;
    Tensor forward(const Tensor& features, const TargetMask& mask) const;
    std::int64_t channels() const { return out.weight.dim(0); }
    void collect(const std::string& prefix, std::vector<NamedTensor>& out_list) const;
};

Tensor ccnl_forward(const CCNLUnit& unit, const Tensor& input);
Tensor ccam_forward(const CCAMUnit& unit, const Tensor& features, const TargetMask& mask);

struct GeneratorConfig {
    int domains = kNumDomains;
    int base_channels = 16;
    int levels = 3;
    double leaky_slope = 0.2;

    void validate() const;
    bool operator==(const GeneratorConfig&) const = default;
};

class GeneratorNet {
public:
    GeneratorNet(const GeneratorConfig& config, Rng& rng);

    const GeneratorConfig& config() const { return config_; }

    /// Raw forward pass: branch_inputs[i] is the [B,1,H,W] image routed to
    /// encoder branch i (all N of them, placeholder included).
    Tensor forward(const std::vector<Tensor>& branch_inputs, const TargetMask& mask) const;

    std::vector<NamedTensor> parameters() const;

private:
    struct EncoderBranch {
        std::vector<CCNLUnit> blocks;      // one per level
        std::vector<Conv2d> downsamplers;  // levels - 1
    };
    struct DecoderLevel {
        ConvTranspose2d up;  // unused at the deepest level
        CCNLUnit block;
        CCAMUnit attention;
    };

    GeneratorConfig config_;
    std::vector<EncoderBranch> encoders_;
    std::vector<DecoderLevel> decoder_;  // indexed by level
    Conv2d output_;
};

struct DomainImage {
    int domain;
    Tensor image;  // [B,1,H,W]
};

enum class MissingSlotPolicy {
    kZeros,  // zero image in the target-domain branch
};

/// x_hat_target = G({x_k : k != target}; target). Inputs are routed to
/// branches by domain key, so their order does not matter.
Tensor impute(const GeneratorNet& net, const std::vector<DomainImage>& inputs, const TargetMask& target,
              MissingSlotPolicy policy = MissingSlotPolicy::kZeros);

/// Reconstructs the original of `reconstruct_domain` from the fake of
/// `fake_domain` together with the real images of every other domain.
/// `reals` must hold exactly the domains other than both of those.
Tensor backward_cycle(const GeneratorNet& net, const Tensor& fake, const std::vector<DomainImage>& reals,
                      int fake_domain, int reconstruct_domain);

}  // namespace collagan
