// SPDX-License-Identifier: Apache-2.0
//
// Evaluation measures and reports: NMSE, scalar SSIM, Dice, per-image
// imputation records, and the leave-one-domain-out essentiality study.

#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "collagan/generator.hpp"
#include "collagan/phantom.hpp"

namespace collagan {

/// ||x_true - x_hat||^2 / ||x_true||^2. Throws NumericError if x_true is zero.
double nmse(std::span<const double> x_true, std::span<const double> x_hat);
double nmse(const Tensor& x_true, const Tensor& x_hat);

/// Mean SSIM of one [H,W] image pair (any leading extents of 1), computed by
/// direct window sums. Uses the same window, constants and dynamic-range rule
/// as the differentiable ssim_map.
double ssim_scalar(const Tensor& x_true, const Tensor& x_hat, int window = 7);

/// 2|A ∩ B| / (|A| + |B|) over binary masks (nonzero = inside); two empty
/// masks score 1.
double dice(std::span<const double> gt, std::span<const double> pred);
double dice(const Tensor& gt, const Tensor& pred);

struct ImageRecord {
    int subject = 0;
    int slice = 0;
    int target = 0;
    double nmse = 0.0;
    double ssim = 0.0;
};

struct DomainAggregate {
    int target = 0;
    std::size_t count = 0;
    double nmse_mean = 0.0, nmse_std = 0.0;
    double ssim_mean = 0.0, ssim_std = 0.0;
};

struct MetricsReport {
    std::string tag;
    std::vector<ImageRecord> records;

    /// One entry per target domain present in records, ascending. Standard
    /// deviations are population deviations.
    std::vector<DomainAggregate> aggregates() const;
    void write_csv(std::ostream& os) const;
    void write_table(std::ostream& os) const;
};

/// Writes an 8-bit binary PGM of a [1,H,W] or [H,W] image, min-max windowed.
void write_pgm(const std::filesystem::path& path, const Tensor& image);

/// Threshold segmenter for the exclusive-lesion class.
///   foreground = T1 > fg_fraction * max(T1)
///   lesion     = T1Gd > lesion_ratio * median(T1Gd over foreground), within foreground
struct ToySegmenter {
    double fg_fraction = 0.1;
    double lesion_ratio = 2.25;

    /// images: kPhantomDomains x [1,H,W]. Returns a binary [1,H,W] mask.
    Tensor segment(const std::vector<Tensor>& images) const;
    /// Domains the segmenter reads.
    static std::vector<int> inputs() { return {0, kExclusiveDomain}; }
};

struct EssentialityRow {
    std::string label;  // "Original" or "<domain>_Colla"
    int substituted = -1;
    double dice_mean = 0.0;
    double dice_std = 0.0;
    std::vector<double> per_image;
};

/// Imputes `target` of one preprocessed set from its other domains, [1,H,W].
Tensor impute_domain(const GeneratorNet& net, const DomainSet& set, int target);
/// impute_domain for every domain in order.
std::vector<Tensor> impute_all_domains(const GeneratorNet& net, const DomainSet& set);

/// Row 0 uses the real images; row 1 + k replaces domain k by its imputation.
/// Sets must already be preprocessed.
std::vector<EssentialityRow> essentiality_study(const GeneratorNet& net, const std::vector<const DomainSet*>& sets,
                                                const ToySegmenter& segmenter = {});
void write_essentiality_csv(std::ostream& os, const std::vector<EssentialityRow>& rows);
void write_essentiality_table(std::ostream& os, const std::vector<EssentialityRow>& rows);

}  // namespace collagan
