// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference gradient checks. The checked function is reduced
// to a scalar through a fixed random projection, so every output element
// contributes. The error of one input is normwise:
//
//   max_j |analytic_j - numeric_j| / max(max_j |analytic_j|, max_j |numeric_j|, floor)
//
// and a case reports the largest error over its inputs.

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "collagan/layers.hpp"

namespace collagan {

using TensorFn = std::function<Tensor(const std::vector<Tensor>&)>;

inline constexpr double kFiniteDifferenceStep = 1e-5;
inline constexpr double kGradientErrorFloor = 1e-8;

/// Largest normwise error over all inputs. Inputs are cloned; the callers'
/// tensors are left untouched. Non-scalar outputs are projected onto random
/// weights drawn from projection_rng.
double max_gradient_error(const TensorFn& fn, const std::vector<Tensor>& inputs, Rng& projection_rng,
                          double h = kFiniteDifferenceStep, double floor = kGradientErrorFloor);

struct GradCase {
    std::string name;
    bool composite = false;  // losses and multi-op blocks
    std::function<std::vector<Tensor>(Rng&)> make_inputs;
    /// Built per trial so constants (dropout masks, class labels, weights
    /// that are not checked) can be drawn from the trial's engine.
    std::function<TensorFn(Rng&)> make_fn;
};

/// Every differentiable primitive and every training loss on 8x8 inputs.
std::vector<GradCase> standard_gradient_cases();

struct GradCaseResult {
    std::string name;
    bool composite = false;
    int trials = 0;
    double max_error = 0.0;
    double tolerance = 0.0;
    bool passed() const { return max_error < tolerance; }
};

/// Runs each case for `trials` seeds derived from `seed`.
std::vector<GradCaseResult> run_gradient_suite(const std::vector<GradCase>& cases, std::uint64_t seed, int trials,
                                               double primitive_tolerance, double composite_tolerance);

}  // namespace collagan
