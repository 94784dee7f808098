// SPDX-License-Identifier: Apache-2.0
//
// Training objectives: multiple cycle consistency (L1 and SSIM), the
// least-squares adversarial pair, domain classification, and their weighted
// combinations.

#pragma once

#include <map>

#include "collagan/discriminator.hpp"

namespace collagan {

struct LossWeights {
    double mcc = 10.0;
    double mcc_ssim = 1.0;
    double gan = 1.0;
    double clsf = 1.0;

    /// All >= 0 and at least one > 0; required of a training configuration.
    void validate() const;
    /// All >= 0. An all-zero combination is a valid (constant zero) loss.
    void validate_nonnegative() const;
    bool operator==(const LossWeights&) const = default;
};

/// One forward imputation and its N-1 backward reconstructions.
struct CycleBundle {
    int target = 0;
    int num_domains = kNumDomains;
    Tensor forward_fake;                 // x_hat_target
    std::map<int, Tensor> reconstructions;  // k -> x_tilde_{k|target}, k != target
    std::map<int, Tensor> originals;        // k -> x_k

    /// Throws std::invalid_argument unless exactly the N-1 non-target
    /// reconstructions are present, each with a matching original.
    void validate() const;
};

// ---- SSIM -----------------------------------------------------------------

struct SsimOptions {
    int window = 7;
    double k1 = 0.01;
    double k2 = 0.03;
    double min_dynamic_range = 1e-3;
};

inline constexpr double kSsimLossFloor = 1e-12;

/// Per-pixel SSIM over a uniform window with reflect padding. The dynamic
/// range L of each sample pair is max - min over both images, floored at
/// min_dynamic_range; C1 = (k1 L)^2, C2 = (k2 L)^2.
Tensor ssim_map(const Tensor& x, const Tensor& y, const SsimOptions& options = {});

/// -log( mean((1 + S) / 2) ), argument floored at kSsimLossFloor.
Tensor ssim_loss_from_map(const Tensor& ssim);
Tensor ssim_loss(const Tensor& x, const Tensor& y, const SsimOptions& options = {});

// ---- cycle losses ---------------------------------------------------------

/// Sum over k != target of mean |x_k - x_tilde_{k|target}|.
Tensor mcc_loss(const CycleBundle& bundle);
/// Sum over k != target of ssim_loss(x_k, x_tilde_{k|target}).
Tensor mcc_ssim_loss(const CycleBundle& bundle, const SsimOptions& options = {});

// ---- adversarial and classification ---------------------------------------

/// mean((real - 1)^2) + mean(fake^2).
Tensor gan_loss_dsc(const Tensor& patch_real, const Tensor& patch_fake);
/// mean((fake - 1)^2).
Tensor gan_loss_gen(const Tensor& patch_fake);

/// Cross-entropy of the real image's logits against its true domain; used to
/// train the classifier head.
Tensor clsf_loss_real(const Tensor& class_logits, int true_domain);
/// Same cross-entropy on a generated image; the caller freezes the
/// discriminator so only the generator receives gradients.
Tensor clsf_loss_fake(const Tensor& class_logits, int target_domain);

// ---- totals ---------------------------------------------------------------

struct GeneratorLossTerms {
    Tensor mcc, mcc_ssim, gan_gen, clsf_fake, total;
};

struct DiscriminatorLossTerms {
    Tensor gan_dsc, clsf_real, total;
};

/// weights.mcc*L_mcc + weights.mcc_ssim*L_mcc-SSIM + weights.gan*L_gan^gen +
/// weights.clsf*L_clsf^fake. patch_fake and logits_fake come from the
/// discriminator applied to the generated image.
GeneratorLossTerms total_generator_loss(const CycleBundle& bundle, const Tensor& patch_fake, const Tensor& logits_fake,
                                        const LossWeights& weights, const SsimOptions& ssim = {});

/// L_gan^dsc + L_clsf^real.
DiscriminatorLossTerms total_discriminator_loss(const Tensor& patch_real, const Tensor& patch_fake,
                                                const Tensor& logits_real, int true_domain);

}  // namespace collagan
