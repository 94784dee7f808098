// SPDX-License-Identifier: Apache-2.0

#include "collagan/discriminator.hpp"

#include <stdexcept>

namespace collagan {

void DiscriminatorConfig::validate() const {
    if (domains < 2) throw std::invalid_argument("discriminator: domains must be >= 2");
    if (base_channels < 1) throw std::invalid_argument("discriminator: base_channels must be >= 1");
    if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) throw std::invalid_argument("discriminator: leaky_slope in (0,1)");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw std::invalid_argument("discriminator: dropout in [0,1)");
}

DiscriminatorNet::DiscriminatorNet(const DiscriminatorConfig& config, Rng& rng) : config_(config) {
    config_.validate();
    const std::int64_t c = config_.base_channels;
    const double s = config_.leaky_slope;
    b1_full_ = Conv2d::create(1, c, 3, 1, 1, s, rng);
    b1_down1_ = Conv2d::create(c, c, 4, 2, 1, s, rng);
    b1_down2_ = Conv2d::create(c, c, 4, 2, 1, s, rng);
    b2_conv_ = Conv2d::create(1, c, 3, 1, 1, s, rng);
    b3_down1_ = Conv2d::create(1, c, 4, 2, 1, s, rng);
    b3_down2_ = Conv2d::create(c, c, 4, 2, 1, s, rng);
    trunk1_ = Conv2d::create(3 * c, 2 * c, 4, 2, 1, s, rng);
    trunk2_ = Conv2d::create(2 * c, 4 * c, 4, 2, 1, s, rng);
    trunk3_ = Conv2d::create(4 * c, 8 * c, 4, 2, 1, s, rng);
    source_head_ = Conv2d::create(8 * c, 1, 3, 1, 1, 1.0, rng);
    class_head_ = Linear::create(8 * c, config_.domains, 1.0, rng);
}

Tensor DiscriminatorNet::quarter_resolution(const Tensor& image) { return avg_pool2(avg_pool2(image)); }

Tensor DiscriminatorNet::trunk_features(const Tensor& image, bool training, Rng& rng) const {
    if (image.rank() != 4 || image.dim(1) != 1) {
        throw ShapeError("discriminator: input must be [B,1,H,W], got " + shape_to_string(image.shape()));
    }
    if (image.dim(2) % kDiscriminatorStride != 0) {
        throw ShapeError("discriminator: axis 2 (height) must be divisible by 32");
    }
    if (image.dim(3) % kDiscriminatorStride != 0) {
        throw ShapeError("discriminator: axis 3 (width) must be divisible by 32");
    }
    const double s = config_.leaky_slope;
    auto act = [s](const Tensor& t) { return leaky_relu(t, s); };

    Tensor f1 = act(b1_down2_(act(b1_down1_(act(b1_full_(image))))));
    Tensor f2 = act(b2_conv_(quarter_resolution(image)));
    Tensor f3 = act(b3_down2_(act(b3_down1_(image))));
    Tensor h = concat({f1, f2, f3}, 1);
    h = act(trunk3_(act(trunk2_(act(trunk1_(h))))));
    return dropout(h, config_.dropout_rate, training, rng);
}

DiscriminatorOutput DiscriminatorNet::forward(const Tensor& image, bool training, Rng& rng) const {
    Tensor h = trunk_features(image, training, rng);
    return {source_head_(h), class_head_(avg_pool_global(h))};
}

DiscriminatorOutput DiscriminatorNet::forward(const Tensor& image) const {
    Rng unused(0);
    return forward(image, false, unused);
}

std::vector<NamedTensor> DiscriminatorNet::trunk_parameters() const {
    std::vector<NamedTensor> out;
    b1_full_.collect("disc.b1.full", out);
    b1_down1_.collect("disc.b1.down1", out);
    b1_down2_.collect("disc.b1.down2", out);
    b2_conv_.collect("disc.b2.conv", out);
    b3_down1_.collect("disc.b3.down1", out);
    b3_down2_.collect("disc.b3.down2", out);
    trunk1_.collect("disc.trunk1", out);
    trunk2_.collect("disc.trunk2", out);
    trunk3_.collect("disc.trunk3", out);
    return out;
}

std::vector<NamedTensor> DiscriminatorNet::source_head_parameters() const {
    std::vector<NamedTensor> out;
    source_head_.collect("disc.source_head", out);
    return out;
}

std::vector<NamedTensor> DiscriminatorNet::class_head_parameters() const {
    std::vector<NamedTensor> out;
    class_head_.collect("disc.class_head", out);
    return out;
}

std::vector<NamedTensor> DiscriminatorNet::parameters() const {
    auto out = trunk_parameters();
    for (auto& p : source_head_parameters()) out.push_back(p);
    for (auto& p : class_head_parameters()) out.push_back(p);
    return out;
}

DiscriminatorOutput discriminate(const DiscriminatorNet& net, const Tensor& image, bool training, Rng& rng) {
    return net.forward(image, training, rng);
}

Tensor patchgan_target(const Shape& shape, int value) {
    if (value != 0 && value != 1) throw std::invalid_argument("patchgan_target: value must be 0 or 1");
    return Tensor::full(shape, static_cast<double>(value));
}

}  // namespace collagan
