// SPDX-License-Identifier: Apache-2.0
//
// Adam with bias correction. Moments mirror the parameter list passed at
// construction; parameters without a gradient are skipped for that step.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "collagan/snapshot.hpp"

namespace collagan {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void validate() const;
    bool operator==(const AdamConfig&) const = default;
};

class Adam {
public:
    Adam(std::vector<NamedTensor> params, const AdamConfig& config);

    const AdamConfig& config() const { return config_; }
    std::int64_t step_count() const { return step_; }

    /// One update from the accumulated gradients, then releases them.
    void step();
    void zero_grad();

    const std::vector<NamedTensor>& parameters() const { return params_; }

    /// Moments as named tensors ("<param>.m", "<param>.v") plus "adam.step".
    std::vector<NamedTensor> state() const;
    void load_state(std::span<const NamedTensor> state);

private:
    std::vector<NamedTensor> params_;
    std::vector<std::vector<double>> m_, v_;
    AdamConfig config_;
    std::int64_t step_ = 0;
};

}  // namespace collagan
