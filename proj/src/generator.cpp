// SPDX-License-Identifier: Apache-2.0

#include "collagan/generator.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

namespace collagan {

TargetMask::TargetMask(int domain, int num_domains, std::int64_t batch, std::int64_t height, std::int64_t width)
    : domain_(domain), num_domains_(num_domains) {
    if (num_domains < 2) throw std::invalid_argument("TargetMask: need at least two domains");
    if (domain < 0 || domain >= num_domains) {
        throw std::out_of_range("TargetMask: domain " + std::to_string(domain) + " outside [0, " +
                                std::to_string(num_domains) + ")");
    }
    if (batch < 1 || height < 1 || width < 1) throw ShapeError("TargetMask: degenerate extents");
    const std::int64_t plane = height * width;
    std::vector<double> spatial(static_cast<std::size_t>(batch * num_domains * plane), 0.0);
    std::vector<double> vec(static_cast<std::size_t>(batch * num_domains), 0.0);
    for (std::int64_t b = 0; b < batch; ++b) {
        auto first = spatial.begin() + (b * num_domains + domain) * plane;
        std::fill(first, first + plane, 1.0);
        vec[static_cast<std::size_t>(b * num_domains + domain)] = 1.0;
    }
    spatial_ = Tensor::from_data({batch, num_domains, height, width}, std::move(spatial));
    vector_ = Tensor::from_data({batch, num_domains}, std::move(vec));
}

// ---- CCNL ------------------------------------------------------------------

CCNLUnit CCNLUnit::create(std::int64_t in_channels, std::int64_t c1, std::int64_t c3, double slope, Rng& rng) {
    CCNLUnit u;
    u.conv1x1 = Conv2d::create(in_channels, c1, 1, 1, 0, slope, rng);
    u.conv3x3 = Conv2d::create(in_channels, c3, 3, 1, 1, slope, rng);
    u.slope = slope;
    return u;
}

Tensor CCNLUnit::forward(const Tensor& x) const {
    if (x.rank() != 4 || x.dim(1) != in_channels()) {
        throw ShapeError("CCNL: axis 1 (channels) expected " + std::to_string(in_channels()) + ", got " +
                         shape_to_string(x.shape()));
    }
    Tensor y = concat({conv1x1(x), conv3x3(x)}, 1);
    return leaky_relu(instance_norm(y), slope);
}

void CCNLUnit::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
    conv1x1.collect(prefix + ".conv1x1", out);
    conv3x3.collect(prefix + ".conv3x3", out);
}

Tensor ccnl_forward(const CCNLUnit& unit, const Tensor& input) { return unit.forward(input); }

// ---- CCAM ------------------------------------------------------------------

CCAMUnit CCAMUnit::create(std::int64_t channels, int num_domains, double slope, Rng& rng) {
    CCAMUnit u;
    const std::int64_t hidden = std::max<std::int64_t>(4, channels / 2);
    u.hidden = Linear::create(channels + num_domains, hidden, slope, rng);
    u.out = Linear::create(hidden, channels, 1.0, rng);
    u.slope = slope;
    return u;
}

Tensor CCAMUnit::attention(const Tensor& features, const TargetMask& mask) const {
    if (features.rank() != 4 || features.dim(1) != channels()) {
        throw ShapeError("CCAM: axis 1 (channels) expected " + std::to_string(channels()) + ", got " +
                         shape_to_string(features.shape()));
    }
    const Tensor& m = mask.vector();
    if (m.dim(0) != features.dim(0)) throw ShapeError("CCAM: mask axis 0 (batch) mismatch");
    if (m.dim(1) + channels() != hidden.weight.dim(1)) throw ShapeError("CCAM: mask axis 1 (domains) mismatch");
    Tensor pooled = concat({avg_pool_global(features), m}, 1);
    return sigmoid(out(leaky_relu(hidden(pooled), slope)));
}

Tensor CCAMUnit::forward(const Tensor& features, const TargetMask& mask) const {
    return scale_channels(features, attention(features, mask));
}

void CCAMUnit::collect(const std::string& prefix, std::vector<NamedTensor>& out_list) const {
    hidden.collect(prefix + ".hidden", out_list);
    out.collect(prefix + ".out", out_list);
}

Tensor ccam_forward(const CCAMUnit& unit, const Tensor& features, const TargetMask& mask) {
    return unit.forward(features, mask);
}

// ---- generator -------------------------------------------------------------

void GeneratorConfig::validate() const {
    if (domains < 2) throw std::invalid_argument("generator: domains must be >= 2");
    if (base_channels < 1) throw std::invalid_argument("generator: base_channels must be >= 1");
    if (levels < 1 || levels > 6) throw std::invalid_argument("generator: levels must lie in [1,6]");
    if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) throw std::invalid_argument("generator: leaky_slope in (0,1)");
}

GeneratorNet::GeneratorNet(const GeneratorConfig& config, Rng& rng) : config_(config) {
    config_.validate();
    const int n = config_.domains;
    const double slope = config_.leaky_slope;
    auto width = [&](int level) -> std::int64_t { return static_cast<std::int64_t>(config_.base_channels) << level; };

    encoders_.resize(static_cast<std::size_t>(n));
    for (auto& branch : encoders_) {
        std::int64_t in = 1 + n;
        for (int l = 0; l < config_.levels; ++l) {
            if (l > 0) {
                branch.downsamplers.push_back(Conv2d::create(in, in, 4, 2, 1, slope, rng));
            }
            branch.blocks.push_back(CCNLUnit::create(in, width(l), width(l), slope, rng));
            in = 2 * width(l);
        }
    }

    decoder_.resize(static_cast<std::size_t>(config_.levels));
    for (int l = config_.levels - 1; l >= 0; --l) {
        auto& level = decoder_[static_cast<std::size_t>(l)];
        const std::int64_t skip = n * 2 * width(l);
        std::int64_t in = skip;
        if (l < config_.levels - 1) {
            const std::int64_t up_out = 2 * width(l);
            level.up = ConvTranspose2d::create(2 * width(l + 1), up_out, slope, rng);
            in += up_out;
        }
        level.block = CCNLUnit::create(in, width(l), width(l), slope, rng);
        level.attention = CCAMUnit::create(2 * width(l), n, slope, rng);
    }
    output_ = Conv2d::create(2 * width(0), 1, 1, 1, 0, 1.0, rng);
}

Tensor GeneratorNet::forward(const std::vector<Tensor>& branch_inputs, const TargetMask& mask) const {
    const int n = config_.domains;
    if (static_cast<int>(branch_inputs.size()) != n) {
        throw ShapeError("generator: expected " + std::to_string(n) + " branch inputs, got " +
                         std::to_string(branch_inputs.size()));
    }
    if (mask.num_domains() != n) throw ShapeError("generator: mask axis 1 (domains) mismatch");
    const Tensor& first = branch_inputs[0];
    if (first.rank() != 4 || first.dim(1) != 1) {
        throw ShapeError("generator: inputs must be [B,1,H,W], got " + shape_to_string(first.shape()));
    }
    const std::int64_t stride = std::int64_t{1} << (config_.levels - 1);
    if (first.dim(2) % stride != 0) throw ShapeError("generator: axis 2 (height) not divisible by 2^(levels-1)");
    if (first.dim(3) % stride != 0) throw ShapeError("generator: axis 3 (width) not divisible by 2^(levels-1)");
    if (mask.spatial().shape() != Shape{first.dim(0), n, first.dim(2), first.dim(3)}) {
        throw ShapeError("generator: spatial mask " + shape_to_string(mask.spatial().shape()) +
                         " does not match inputs " + shape_to_string(first.shape()));
    }

    // skips[l][i]: encoder branch i at level l.
    std::vector<std::vector<Tensor>> skips(static_cast<std::size_t>(config_.levels));
    for (int i = 0; i < n; ++i) {
        const Tensor& img = branch_inputs[static_cast<std::size_t>(i)];
        if (img.shape() != first.shape()) {
            throw ShapeError("generator: branch " + std::to_string(i) + " shape " + shape_to_string(img.shape()) +
                             " differs from " + shape_to_string(first.shape()));
        }
        const auto& branch = encoders_[static_cast<std::size_t>(i)];
        Tensor h = concat({img, mask.spatial()}, 1);
        for (int l = 0; l < config_.levels; ++l) {
            if (l > 0) h = branch.downsamplers[static_cast<std::size_t>(l - 1)](h);
            h = branch.blocks[static_cast<std::size_t>(l)].forward(h);
            skips[static_cast<std::size_t>(l)].push_back(h);
        }
    }

    Tensor h;
    for (int l = config_.levels - 1; l >= 0; --l) {
        const auto& level = decoder_[static_cast<std::size_t>(l)];
        std::vector<Tensor> parts;
        if (l < config_.levels - 1) parts.push_back(level.up(h));
        for (auto& s : skips[static_cast<std::size_t>(l)]) parts.push_back(s);
        h = level.attention.forward(level.block.forward(concat(parts, 1)), mask);
    }
    return output_(h);
}

std::vector<NamedTensor> GeneratorNet::parameters() const {
    std::vector<NamedTensor> out;
    for (std::size_t i = 0; i < encoders_.size(); ++i) {
        const std::string p = "gen.enc" + std::to_string(i);
        const auto& branch = encoders_[i];
        for (std::size_t l = 0; l < branch.blocks.size(); ++l) {
            if (l > 0) branch.downsamplers[l - 1].collect(p + ".down" + std::to_string(l), out);
            branch.blocks[l].collect(p + ".ccnl" + std::to_string(l), out);
        }
    }
    for (std::size_t l = 0; l < decoder_.size(); ++l) {
        const std::string p = "gen.dec" + std::to_string(l);
        const auto& level = decoder_[l];
        if (l + 1 < decoder_.size()) level.up.collect(p + ".up", out);
        level.block.collect(p + ".ccnl", out);
        level.attention.collect(p + ".ccam", out);
    }
    output_.collect("gen.out", out);
    return out;
}

Tensor impute(const GeneratorNet& net, const std::vector<DomainImage>& inputs, const TargetMask& target,
              MissingSlotPolicy policy) {
    const int n = net.config().domains;
    if (target.num_domains() != n) throw std::invalid_argument("impute: mask domain count differs from generator");
    if (static_cast<int>(inputs.size()) != n - 1) {
        throw std::invalid_argument("impute: expected " + std::to_string(n - 1) + " source domains, got " +
                                    std::to_string(inputs.size()));
    }
    std::vector<Tensor> slots(static_cast<std::size_t>(n));
    for (const auto& in : inputs) {
        if (in.domain < 0 || in.domain >= n) {
            throw std::invalid_argument("impute: source domain " + std::to_string(in.domain) + " out of range");
        }
        if (in.domain == target.domain()) {
            throw std::invalid_argument("impute: target domain " + std::to_string(in.domain) +
                                        " is among the inputs");
        }
        if (slots[static_cast<std::size_t>(in.domain)].defined()) {
            throw std::invalid_argument("impute: duplicate source domain " + std::to_string(in.domain));
        }
        slots[static_cast<std::size_t>(in.domain)] = in.image;
    }
    const Tensor& ref = inputs.front().image;
    for (const auto& in : inputs) {
        if (in.image.shape() != ref.shape()) {
            throw ShapeError("impute: domain " + std::to_string(in.domain) + " shape " +
                             shape_to_string(in.image.shape()) + " differs from " + shape_to_string(ref.shape()));
        }
    }
    switch (policy) {
        case MissingSlotPolicy::kZeros:
            slots[static_cast<std::size_t>(target.domain())] = Tensor::zeros(ref.shape());
            break;
    }
    return net.forward(slots, target);
}

Tensor backward_cycle(const GeneratorNet& net, const Tensor& fake, const std::vector<DomainImage>& reals,
                      int fake_domain, int reconstruct_domain) {
    if (fake_domain == reconstruct_domain) {
        throw std::invalid_argument("backward_cycle: reconstruct domain equals the fake's domain");
    }
    for (const auto& r : reals) {
        if (r.domain == fake_domain || r.domain == reconstruct_domain) {
            throw std::invalid_argument("backward_cycle: reals must exclude domains " + std::to_string(fake_domain) +
                                        " and " + std::to_string(reconstruct_domain));
        }
    }
    std::vector<DomainImage> inputs = reals;
    inputs.push_back({fake_domain, fake});
    const Tensor& ref = fake;
    if (ref.rank() != 4) throw ShapeError("backward_cycle: fake must be [B,1,H,W]");
    TargetMask mask(reconstruct_domain, net.config().domains, ref.dim(0), ref.dim(2), ref.dim(3));
    return impute(net, inputs, mask);
}

}  // namespace collagan
