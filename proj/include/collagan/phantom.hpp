// SPDX-License-Identifier: Apache-2.0
//
// Procedural multi-contrast phantoms. Each slice is a latent tissue map built
// from ellipses; four deterministic contrast curves render it into aligned
// domain images. One lesion class adds signal to the last domain only, so
// that domain carries information the others cannot supply.
//
// Dataset directory layout:
//   manifest.txt             plain text, see save_dataset
//   subject_<id>.snap        snapshot with tensors "slice<j>.<domain>" and
//                            "slice<j>.lesion", each [1,H,W]

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "collagan/layers.hpp"

namespace collagan {

inline constexpr int kPhantomDomains = 4;
inline const std::array<std::string, kPhantomDomains> kDomainNames = {"T1", "T2", "T2F", "T1Gd"};
/// Domain whose exclusive lesions are invisible in every other domain.
inline constexpr int kExclusiveDomain = 3;
inline constexpr int kDatasetVersion = 1;

/// Index of a domain name, or -1 when unknown.
int domain_index(const std::string& name);

enum class PrimitiveKind { kTissue, kSharedLesion, kExclusiveLesion };

struct Ellipse {
    double cx, cy;  // centre in the unit square
    double ax, ay;  // semi-axes
    double theta;   // rotation, radians
    double value;   // tissue value in [0,1]
    PrimitiveKind kind = PrimitiveKind::kTissue;

    bool contains(double x, double y) const;
};

struct PhantomScene {
    int subject = 0;
    int slice = 0;
    std::vector<Ellipse> primitives;  // painted in order; the first is the head support
};

/// Contrast curves, applied inside the head support (zero outside).
///   T1   0.15 + 0.85 t
///   T2   1 - 0.8 t
///   T2F  0.1 + 0.9 t^1.5
///   T1Gd 0.1 + 0.6 t + gain * [exclusive lesion]
struct ContrastTransform {
    double exclusive_gain = 1.0;

    double apply(int domain, double tissue, bool exclusive_lesion) const;
};

struct DomainSet {
    int subject = 0;
    int slice = 0;
    std::vector<Tensor> images;  // kPhantomDomains x [1,H,W]
    Tensor lesion_mask;          // [1,H,W], 1 on exclusive-lesion pixels
};

enum class Split { kTrain, kVal, kTest };
std::string split_name(Split split);
Split parse_split(const std::string& name);

struct Dataset {
    int height = 0;
    int width = 0;
    int slices_per_subject = 0;
    std::uint64_t seed = 0;
    std::vector<Split> subject_split;  // indexed by subject id
    std::vector<DomainSet> sets;       // subject-major, slice-minor

    int num_subjects() const { return static_cast<int>(subject_split.size()); }
    std::vector<const DomainSet*> select(Split split) const;
    bool operator==(const Dataset& other) const;
};

/// Subject anatomy comes from (seed, subject); slice detail from
/// (seed, subject, slice). Slices of one subject share head and brain shape.
PhantomScene make_scene(int subject, int slice, int slices_per_subject, std::uint64_t seed);

/// Renders a scene. With include_exclusive false the exclusive lesions are
/// left out, which changes only the exclusive domain.
DomainSet render_scene(const PhantomScene& scene, int height, int width, const ContrastTransform& contrast = {},
                       bool include_exclusive = true);

/// Subject-wise 8:1:1 split: n_val = n_test = max(1, round(n/10)), subjects
/// assigned after a seeded shuffle.
std::vector<Split> split_subjects(int n_subjects, std::uint64_t seed);

/// Requires n_subjects >= 3, slices >= 1, and H, W multiples of 32 in [32, 1024].
Dataset generate_dataset(int n_subjects, int slices_per_subject, int height, int width, std::uint64_t seed);

// ---- preprocessing ---------------------------------------------------------

/// Scales the image so the standard deviation over nonzero pixels is 1.
/// Zero pixels stay zero. Throws NumericError for an all-zero image.
Tensor normalize(const Tensor& image);
/// normalize applied to every domain image; the mask is copied.
DomainSet preprocess(const DomainSet& set);

struct AugmentParams {
    double scale = 1.0;  // zoom about the centre
    bool flip = false;   // mirror along the width axis
};

/// scale ~ U[0.9, 1.1], flip with probability 0.5.
AugmentParams draw_augment(Rng& rng);
/// Same geometric transform for every domain and the mask; the mask is
/// re-binarised at 0.5 after bilinear resampling.
DomainSet apply_augment(const DomainSet& set, const AugmentParams& params);
DomainSet augment(const DomainSet& set, Rng& rng);

/// Stacks domain `domain` of each set into [B,1,H,W].
Tensor stack_domain(const std::vector<const DomainSet*>& sets, int domain);

// ---- persistence -----------------------------------------------------------

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
/// Throws FormatError on a missing or malformed manifest, a version
/// mismatch, or inconsistent subject files.
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace collagan
