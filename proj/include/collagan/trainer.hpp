// SPDX-License-Identifier: Apache-2.0
//
// Alternating training loop. Every step draws a target domain, imputes it,
// reconstructs each other domain through a backward cycle, then updates the
// discriminator (generated image detached) followed by the generator (with
// the discriminator frozen).
//
// All randomness (initialisation, batch sampling, augmentation, target
// draws, dropout) comes from one engine seeded by TrainConfig::seed, so a run
// is a pure function of its config and dataset.
//
// Checkpoint directory:
//   config.txt  the TrainConfig as key=value
//   state.txt   step, best validation score, engine state
//   gen.snap, disc.snap, opt_gen.snap, opt_disc.snap

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "collagan/config.hpp"
#include "collagan/losses.hpp"
#include "collagan/optimizer.hpp"
#include "collagan/phantom.hpp"

namespace collagan {

struct TrainConfig {
    std::int64_t steps = 2000;
    int batch_size = 4;
    AdamConfig adam_gen{};
    AdamConfig adam_disc{};
    std::uint64_t seed = 0;
    LossWeights weights{};
    GeneratorConfig generator{};
    DiscriminatorConfig discriminator{};
    bool augment = true;
    std::int64_t validate_every = 100;
    std::int64_t checkpoint_every = 500;
    int val_max_images = 8;  // 0 = whole validation split

    void validate() const;
    KeyValueConfig to_kv() const;
    /// Starts from the defaults; unknown keys are rejected.
    static TrainConfig from_kv(const KeyValueConfig& kv);
    bool operator==(const TrainConfig&) const = default;
};

struct StepReport {
    std::int64_t step = 0;
    int target = 0;
    double l_mcc = 0, l_mcc_ssim = 0, l_gan_gen = 0, l_gan_dsc = 0, l_clsf_real = 0, l_clsf_fake = 0;
    double g_total = 0, d_total = 0;
};

struct TrainingState {
    TrainConfig config;
    Rng rng;
    GeneratorNet generator;
    DiscriminatorNet discriminator;
    Adam opt_gen;
    Adam opt_disc;
    std::int64_t step = 0;
    double best_score = -1.0;  // lowest mean validation NMSE so far, -1 before any
    std::int64_t best_step = -1;

    explicit TrainingState(const TrainConfig& cfg);
};

/// Images and graph of one step: the stacked (augmented) domain images, the
/// forward imputation and its backward cycles.
struct StepBatch {
    int target = 0;
    std::vector<Tensor> images;  // per domain, [B,1,H,W]
    CycleBundle bundle;
};

/// Draws augmentation from state.rng (when enabled) and runs the generator.
StepBatch prepare_step(TrainingState& state, const std::vector<const DomainSet*>& batch, int target);
/// Minimises L_gan^dsc + L_clsf^real on the real target image and the
/// detached forward imputation. Touches only discriminator parameters.
DiscriminatorLossTerms update_discriminator(TrainingState& state, const StepBatch& step);
/// Minimises the weighted generator objective with the discriminator frozen.
/// Touches only generator parameters.
GeneratorLossTerms update_generator(TrainingState& state, const StepBatch& step);

/// Target domain of a step, uniform over [0, num_domains).
int draw_target(Rng& rng, int num_domains);

/// One alternating update on a batch of preprocessed sets. Throws
/// NumericError with every loss term of the step if any of them is not finite.
StepReport train_step(TrainingState& state, const std::vector<const DomainSet*>& batch);

/// Same, with the target domain fixed instead of drawn.
StepReport train_step(TrainingState& state, const std::vector<const DomainSet*>& batch, int target);

/// Mean NMSE per target domain, imputing each domain of every set from the
/// other domains. Sets must be preprocessed.
std::vector<double> validation_nmse(const GeneratorNet& net, const std::vector<const DomainSet*>& sets);

/// Per-pixel mean over the given sets of one domain, [1,H,W].
Tensor mean_image(const std::vector<const DomainSet*>& sets, int domain);

void save_checkpoint(const TrainingState& state, const std::filesystem::path& dir);
TrainingState load_checkpoint(const std::filesystem::path& dir);
/// Generator only, for inference.
GeneratorNet load_generator(const std::filesystem::path& dir);

struct FitOptions {
    bool resume = false;  // continue from <out>/checkpoints/last if present
    std::function<void(const std::string&)> progress;  // optional log sink
};

struct FitResult {
    std::int64_t steps_run = 0;
    std::vector<double> initial_val_nmse;  // per domain, step 0
    std::vector<double> final_val_nmse;    // per domain, last step
    std::int64_t best_step = -1;
    std::filesystem::path log_path;
};

/// Trains on the dataset's train split, validating on the val split every
/// validate_every steps (and at steps 0 and `steps`). Writes
///   <out>/train_log.csv
///   <out>/checkpoints/{best,last}/
/// The CSV has one row per step plus a step-0 validation row; loss columns
/// are empty on that row and validation columns are empty when no
/// validation ran. Numbers use 17 significant digits.
FitResult fit(const TrainConfig& cfg, const Dataset& dataset, const std::filesystem::path& out,
              const FitOptions& options = {});

/// Header of the training log.
std::string train_log_header(int num_domains);

}  // namespace collagan
