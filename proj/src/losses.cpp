// SPDX-License-Identifier: Apache-2.0

#include "collagan/losses.hpp"

#include <stdexcept>

namespace collagan {

void LossWeights::validate_nonnegative() const {
    if (!(mcc >= 0 && mcc_ssim >= 0 && gan >= 0 && clsf >= 0)) throw std::invalid_argument("loss weights must be >= 0");
}

void LossWeights::validate() const {
    validate_nonnegative();
    if (mcc == 0 && mcc_ssim == 0 && gan == 0 && clsf == 0) {
        throw std::invalid_argument("at least one loss weight must be > 0");
    }
}

void CycleBundle::validate() const {
    if (target < 0 || target >= num_domains) throw std::invalid_argument("cycle bundle: target out of range");
    if (static_cast<int>(reconstructions.size()) != num_domains - 1) {
        throw std::invalid_argument("cycle bundle: expected " + std::to_string(num_domains - 1) +
                                    " backward reconstructions, got " + std::to_string(reconstructions.size()));
    }
    if (reconstructions.count(target)) throw std::invalid_argument("cycle bundle: reconstruction keyed by target");
    for (int k = 0; k < num_domains; ++k) {
        if (k == target) continue;
        if (!reconstructions.count(k)) {
            throw std::invalid_argument("cycle bundle: missing backward reconstruction for domain " + std::to_string(k));
        }
        if (!originals.count(k)) throw std::invalid_argument("cycle bundle: missing original for domain " + std::to_string(k));
    }
}

Tensor ssim_map(const Tensor& x, const Tensor& y, const SsimOptions& options) {
    if (x.shape() != y.shape()) {
        throw ShapeError("ssim_map: shape mismatch " + shape_to_string(x.shape()) + " vs " + shape_to_string(y.shape()));
    }
    const Shape& shape = x.shape();
    Tensor range = clamp_min(sample_range(x, y), options.min_dynamic_range);
    Tensor c1 = broadcast_samples(mul_scalar(range * range, options.k1 * options.k1), shape);
    Tensor c2 = broadcast_samples(mul_scalar(range * range, options.k2 * options.k2), shape);

    const int w = options.window;
    Tensor mu_x = box_filter(x, w);
    Tensor mu_y = box_filter(y, w);
    Tensor mu_xx = mu_x * mu_x;
    Tensor mu_yy = mu_y * mu_y;
    Tensor mu_xy = mu_x * mu_y;
    Tensor var_x = box_filter(x * x, w) - mu_xx;
    Tensor var_y = box_filter(y * y, w) - mu_yy;
    Tensor cov = box_filter(x * y, w) - mu_xy;

    Tensor luminance_num = mul_scalar(mu_xy, 2.0) + c1;
    Tensor luminance_den = mu_xx + mu_yy + c1;
    Tensor structure_num = mul_scalar(cov, 2.0) + c2;
    Tensor structure_den = var_x + var_y + c2;
    return (luminance_num * structure_num) / (luminance_den * structure_den);
}

Tensor ssim_loss_from_map(const Tensor& ssim) {
    Tensor arg = add_scalar(mul_scalar(mean(ssim), 0.5), 0.5);
    return mul_scalar(log(clamp_min(arg, kSsimLossFloor)), -1.0);
}

Tensor ssim_loss(const Tensor& x, const Tensor& y, const SsimOptions& options) {
    return ssim_loss_from_map(ssim_map(x, y, options));
}

Tensor mcc_loss(const CycleBundle& bundle) {
    bundle.validate();
    Tensor total;
    for (const auto& [k, recon] : bundle.reconstructions) {
        Tensor term = mean_abs(bundle.originals.at(k) - recon);
        total = total.defined() ? total + term : term;
    }
    return total;
}

Tensor mcc_ssim_loss(const CycleBundle& bundle, const SsimOptions& options) {
    bundle.validate();
    Tensor total;
    for (const auto& [k, recon] : bundle.reconstructions) {
        Tensor term = ssim_loss(bundle.originals.at(k), recon, options);
        total = total.defined() ? total + term : term;
    }
    return total;
}

Tensor gan_loss_dsc(const Tensor& patch_real, const Tensor& patch_fake) {
    if (patch_real.shape() != patch_fake.shape()) {
        throw ShapeError("gan_loss_dsc: patch maps differ " + shape_to_string(patch_real.shape()) + " vs " +
                         shape_to_string(patch_fake.shape()));
    }
    return mean_sq(patch_real - patchgan_target(patch_real.shape(), 1)) +
           mean_sq(patch_fake - patchgan_target(patch_fake.shape(), 0));
}

Tensor gan_loss_gen(const Tensor& patch_fake) { return mean_sq(patch_fake - patchgan_target(patch_fake.shape(), 1)); }

namespace {
Tensor domain_cross_entropy(const Tensor& logits, int domain) {
    if (logits.rank() != 2) throw ShapeError("classification loss: logits must be [B,N]");
    std::vector<int> classes(static_cast<std::size_t>(logits.dim(0)), domain);
    return softmax_cross_entropy(logits, classes);
}
}  // namespace

Tensor clsf_loss_real(const Tensor& class_logits, int true_domain) { return domain_cross_entropy(class_logits, true_domain); }

Tensor clsf_loss_fake(const Tensor& class_logits, int target_domain) {
    return domain_cross_entropy(class_logits, target_domain);
}

GeneratorLossTerms total_generator_loss(const CycleBundle& bundle, const Tensor& patch_fake, const Tensor& logits_fake,
                                        const LossWeights& weights, const SsimOptions& ssim) {
    weights.validate_nonnegative();
    GeneratorLossTerms t;
    t.mcc = mcc_loss(bundle);
    t.mcc_ssim = mcc_ssim_loss(bundle, ssim);
    t.gan_gen = gan_loss_gen(patch_fake);
    t.clsf_fake = clsf_loss_fake(logits_fake, bundle.target);
    t.total = mul_scalar(t.mcc, weights.mcc) + mul_scalar(t.mcc_ssim, weights.mcc_ssim) +
              mul_scalar(t.gan_gen, weights.gan) + mul_scalar(t.clsf_fake, weights.clsf);
    return t;
}

DiscriminatorLossTerms total_discriminator_loss(const Tensor& patch_real, const Tensor& patch_fake,
                                                const Tensor& logits_real, int true_domain) {
    DiscriminatorLossTerms t;
    t.gan_dsc = gan_loss_dsc(patch_real, patch_fake);
    t.clsf_real = clsf_loss_real(logits_real, true_domain);
    t.total = t.gan_dsc + t.clsf_real;
    return t;
}

}  // namespace collagan
